import sys

def valid(text):
    lines = text.strip().split("\n")
    if len(lines) != 2:
        return False
    n = int(lines[0])
    a = list(map(int, lines[1].split()))
    return 1 <= n <= 10 and len(a) == n and all(1 <= x <= 5 for x in a)

try:
    print(valid(sys.stdin.read()))
except Exception:
    print(False)
