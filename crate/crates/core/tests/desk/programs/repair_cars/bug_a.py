def repairCars(ranks, cars):
    n = len(ranks)
    share = [cars // n + (1 if i < cars % n else 0) for i in range(n)]
    return max(r * k * k for r, k in zip(ranks, share))
