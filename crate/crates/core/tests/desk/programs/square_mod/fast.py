x = int(input())
print(x * x % 97)
