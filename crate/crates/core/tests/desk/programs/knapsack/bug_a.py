n, cap = map(int, input().split())
items = [tuple(map(int, input().split())) for _ in range(n)]
best = 0
for i in range(n):
    if items[i][0] <= cap:
        best = max(best, items[i][1])
    for j in range(i + 1, n):
        if items[i][0] + items[j][0] <= cap:
            best = max(best, items[i][1] + items[j][1])
print(best)
