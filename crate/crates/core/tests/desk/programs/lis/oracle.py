n = int(input())
a = list(map(int, input().split()))
best = 0
for mask in range(1 << n):
    picked = [a[i] for i in range(n) if mask >> i & 1]
    if all(picked[i] < picked[i + 1] for i in range(len(picked) - 1)):
        best = max(best, len(picked))
print(best)
