#!/usr/bin/env python3
"""DIMACS front end for CaDiCaL via PySAT; prints `s` / `v` answer lines.

    python3 tools/pysat_solve.py FILE.cnf
"""
import sys

from pysat.formula import CNF
from pysat.solvers import Solver


def main():
    cnf = CNF(from_file=sys.argv[1])
    with Solver(name="cadical153", bootstrap_with=cnf.clauses) as s:
        if not s.solve():
            print("s UNSATISFIABLE")
            return 20
        model = s.get_model() or []
        print("s SATISFIABLE")
        for i in range(0, len(model), 20):
            print("v " + " ".join(map(str, model[i:i + 20])))
        print("v 0")
        return 10


if __name__ == "__main__":
    sys.exit(main())
