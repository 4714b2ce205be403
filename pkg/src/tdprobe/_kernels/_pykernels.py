"""Pure-Python kernels. Same signatures and arithmetic as ``_ckernels.pyx``."""


def ks_sorted(a, b):
    """sup |F_a - F_b| for two ascending sequences, by a merge walk over distinct values."""
    if hasattr(a, "tolist"):
        a, b = a.tolist(), b.tolist()
    na = len(a)
    nb = len(b)
    i = j = 0
    best = 0.0
    while i < na and j < nb:
        x = a[i] if a[i] <= b[j] else b[j]
        while i < na and a[i] <= x:
            i += 1
        while j < nb and b[j] <= x:
            j += 1
        d = abs(i / na - j / nb)
        if d > best:
            best = d
    return best


def allocate(demand, weight, capacity, out):
    """Share ``capacity`` in proportion to weight x demand, no flow above its demand.

    Flows whose proportional share would exceed their demand are frozen at the
    demand and the rest of the capacity is re-shared among the others.
    """
    n = len(demand)
    total = 0.0
    for i in range(n):
        total += demand[i]
    if total <= capacity:
        for i in range(n):
            out[i] = demand[i]
        return
    active = [i for i in range(n) if demand[i] > 0.0]
    for i in range(n):
        out[i] = 0.0
    remaining = capacity
    while active:
        s = 0.0
        for i in active:
            s += weight[i] * demand[i]
        capped = [i for i in active if remaining * weight[i] * demand[i] / s >= demand[i]]
        if not capped:
            for i in active:
                out[i] = remaining * weight[i] * demand[i] / s
            return
        for i in capped:
            out[i] = demand[i]
            remaining -= demand[i]
        active = [i for i in active if i not in capped]


def simulate_link(offered, rate_Bps, burst, weight, capacity_bps, tick_s, alloc, demand_out):
    """Tick loop of the shared-link fluid model.

    ``offered`` is (ticks, flows) in bit/s. A flow with ``rate_Bps[i] <= 0`` is
    unshaped; otherwise its token bucket (bytes) starts full and refills at
    ``rate_Bps`` up to ``burst``. Writes allocations and effective demands.
    """
    n_ticks = offered.shape[0]
    n = offered.shape[1]
    tokens = [float(burst[i]) for i in range(n)]
    demand = [0.0] * n
    row = [0.0] * n
    for t in range(n_ticks):
        for i in range(n):
            d = float(offered[t, i])
            if rate_Bps[i] > 0.0:
                tokens[i] = min(float(burst[i]), tokens[i] + rate_Bps[i] * tick_s)
                allowance = tokens[i] * 8.0 / tick_s
                if allowance < d:
                    d = allowance
            demand[i] = d
        allocate(demand, weight, capacity_bps, row)
        for i in range(n):
            alloc[t, i] = row[i]
            demand_out[t, i] = demand[i]
            if rate_Bps[i] > 0.0:
                tokens[i] = max(0.0, tokens[i] - row[i] * tick_s / 8.0)


BACKEND = "python"
