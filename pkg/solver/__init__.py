# nett.solver
