"""Pure-Python Gibbs chain kernel; same arithmetic as the compiled one."""


def run_chain(next_state, cdf, kcount, uniforms, state, counts, record_from):
    """Advance one systematic-scan chain over a chunk of sweeps.

    ``uniforms[i, b]`` drives block ``b`` in sweep ``i``.  The new target
    configuration is the first ``k`` with ``u < cdf[b, state, k]`` (the last
    admissible ``k`` absorbs rounding).  Sweeps with index ``>= record_from``
    add one count for the state reached at the end of the sweep.
    Returns the final state.
    """
    nxt = next_state.tolist()
    cum = cdf.tolist()
    last = [int(k) - 1 for k in kcount]
    nb = len(nxt)
    state = int(state)
    tally = {}
    for i, row_u in enumerate(uniforms.tolist()):
        for b in range(nb):
            u = row_u[b]
            row = cum[b][state]
            kmax = last[b]
            k = 0
            while k < kmax and u >= row[k]:
                k += 1
            state = nxt[b][state][k]
        if i >= record_from:
            tally[state] = tally.get(state, 0) + 1
    for s, c in tally.items():
        counts[s] += c
    return state
