"""Cheap per-snapshot monitors recorded during a run."""


def evaluate(name, state, params):
    from .energies import dissipation_rate, physical_energy, rt_margin
    if name == "energy":
        return physical_energy(state, params)
    if name == "dissipation":
        return dissipation_rate(state, params)
    if name == "divB":
        from .dynamics import _geom, _l2
        from .numerics import divergence
        c = _geom(state)
        return _l2(c, divergence(c, state.B))
    if name == "rt_margin":
        return rt_margin(state)["eps0"]
    raise KeyError(name)
