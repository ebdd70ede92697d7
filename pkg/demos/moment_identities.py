"""Spot-check the random-matrix moment identities behind the closed forms.

Every SINR expression rests on a handful of moment identities: fourth
moments of Gaussian vectors, inverse moments of Wishart and gamma variables,
and moments of the cross-covariance estimate. Each family is checked here
against brute-force Monte Carlo on random instances, and the worst
deviation (in standard errors) per identity is reported.

Usage:
    python demos/moment_identities.py [--instances 5] [--samples 50000]
"""

import argparse

from covse.lemma_suite import LEMMAS, run_lemma_suite, summarize


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--instances", type=int, default=5)
    parser.add_argument("--samples", type=int, default=50_000)
    parser.add_argument("--sizes", type=int, nargs="+", default=[2, 4])
    parser.add_argument("--family", choices=sorted(LEMMAS), nargs="+")
    args = parser.parse_args()

    checks = run_lemma_suite(tuple(args.sizes), args.instances, args.samples, lemmas=args.family)
    for s in summarize(checks):
        flag = "ok  " if s.passed else "FAIL"
        print(f"{flag} {s.lemma:40s} {s.identity:24s} max {s.max_sigma:5.2f} sigma over {s.n_checks} checks"
              + (f" ({s.n_confirmations} re-run)" if s.n_confirmations else ""))


if __name__ == "__main__":
    main()
