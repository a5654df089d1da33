"""Command line interface: ``cellassembly <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric/guard error.
Every command prints a one-line JSON summary on stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .errors import DataError, GuardError
from .evaluation import (
    EventTrace,
    coactivity_stats,
    crispness,
    cross_model_robustness,
    delta_py,
    determine_members,
    heterogeneity,
    match_strengths,
    null_word_logprob,
    psth,
)
from .inference import InferenceConfig, PriorKind, infer_corpus
from .learning import LearnConfig, train
from .statistics import fit_hyperparams, hyper_grid, moments, qq_report
from .synthesis import SynthHyperparams, generate_dataset, synthesize_gt

log = logging.getLogger("cellassembly")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

PRIORS = {"binomial": PriorKind.BINOMIAL, "he": PriorKind.HE,
          "homeostatic-egalitarian": PriorKind.HE}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _summary(**kw) -> int:
    print(json.dumps(kw, sort_keys=True, default=_json_default))
    return EXIT_OK


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _parse_set(items):
    out = {}
    for item in items or []:
        key, _, value = item.partition("=")
        if not _:
            raise UsageError(f"--set expects key=value, got {item!r}")
        out[key] = json.loads(value)
    return out


def _hyper_from_args(args) -> SynthHyperparams:
    overrides = _parse_set(args.set)
    if args.hyper:
        base = json.loads(Path(args.hyper).read_text())
        base.update(overrides)
        return SynthHyperparams(**base)
    preset = {"movie": SynthHyperparams.natural_movie,
              "white-noise": SynthHyperparams.white_noise}[args.preset]
    return preset(N=args.cells, M=args.latents, **overrides)


def _load_strengths(path):
    kind, _, _ = io.read_container(path, ("model", "ground_truth"))
    if kind == "model":
        return io.load_model(path).params.strengths()
    return io.load_ground_truth(path).strengths()


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(args):
    hyper = _hyper_from_args(args)
    gt = synthesize_gt(hyper, np.random.default_rng(args.seed))
    io.save_ground_truth(args.out, gt)
    return _summary(command="synth", out=args.out, N=hyper.N, M=hyper.M, Q=gt.Q,
                    assembly_sizes=gt.S.sum(axis=0))


def cmd_gen(args):
    gt = io.load_ground_truth(args.gt)
    ds = generate_dataset(gt, args.count, np.random.default_rng(args.seed))
    ds.gt_digest = io.file_digest(args.gt)
    io.save_dataset(args.out, ds)
    return _summary(command="gen", out=args.out, n_words=args.count,
                    mean_word_length=float(ds.Y.sum(axis=1).mean()),
                    mean_active_latents=float(ds.Z.sum(axis=1).mean()))


def cmd_bin(args):
    ev = io.read_events(args.events)
    corpus = io.bin_events(ev, args.bin_ms, args.step_ms)
    io.save_corpus(args.out, corpus)
    return _summary(command="bin", out=args.out, n_words=corpus.words.shape[0],
                    n_cells=corpus.n_cells, source_sha256=corpus.source_digest)


def _select_half(words, half):
    if half is None:
        return words
    mid = words.shape[0] // 2
    return words[:mid] if half == "first" else words[mid:]


def cmd_train(args):
    corpus = io.load_words(args.corpus)
    words = _select_half(corpus.words, args.half)
    cfg = LearnConfig(
        learning_rate=args.lr, n_passes=args.passes, prior_kind=PRIORS[args.prior],
        sample_order=args.order, rng_seed=args.seed, init_silence=args.init_silence,
        init_jitter_sd=args.init_jitter, q_init=args.q_init, lr_decay=args.lr_decay,
        i0=args.i0, imax=args.imax,
    )
    model, trace, he = train(words, cfg, args.latents)
    io.save_model(args.out, io.ModelFile(model, he, cfg, trace))
    return _summary(command="train", out=args.out, n_words=words.shape[0],
                    mean_log_joint=trace.mean_log_joint, Q=model.Q,
                    latents_used=int((trace.usage > 0).sum()))


def cmd_infer(args):
    mf = io.load_model(args.model)
    corpus = io.load_words(args.corpus, n_cells=mf.params.n_cells)
    M = mf.params.n_latents
    prior = PRIORS[args.prior] if args.prior else (
        mf.config.prior_kind if mf.config else PriorKind.BINOMIAL)
    cfg = InferenceConfig(min(args.i0, M), min(args.imax, M), prior)
    Z = infer_corpus(mf.params, corpus.words, cfg, mf.he_state if prior is PriorKind.HE else None)
    io.write_assignments(args.out, Z, corpus.trials, corpus.starts_ms)
    return _summary(command="infer", out=args.out, n_words=Z.shape[0],
                    mean_active=float(Z.sum(axis=1).mean()), usage=Z.sum(axis=0))


def _moment_rows(ms):
    for k, p in enumerate(ms.word_length_pdf):
        yield ("word_length_pdf", k, "", float(p))
    for i, m in enumerate(ms.cell_means):
        yield ("cell_mean", i, "", float(m))
    N = ms.cell_means.size
    for i in range(N):
        for j in range(i + 1, N):
            yield ("pair_coactivity", i, j, float(ms.pair_coactivity[i, j]))


def cmd_moments(args):
    ms = moments(io.load_words(args.corpus).words)
    result = {"command": "moments", "n_words": ms.n_words,
              "mean_word_length": float(ms.word_length_pdf @ np.arange(ms.word_length_pdf.size))}
    if args.out:
        io.write_table(args.out, ["statistic", "i", "j", "value"], _moment_rows(ms))
        result["out"] = args.out
    if args.compare:
        other = moments(io.load_words(args.compare).words)
        rep = qq_report(ms, other)
        result.update(qq_length=rep.qq_length, qq_mean=rep.qq_mean, qq_pair=rep.qq_pair,
                      qq_combined=rep.combined)
    return _summary(**result)


def cmd_fit(args):
    grid_cfg = json.loads(Path(args.grid).read_text())
    if "preset" in grid_cfg:
        preset = {"movie": SynthHyperparams.natural_movie,
                  "white-noise": SynthHyperparams.white_noise}[grid_cfg["preset"]]
        base = preset(N=grid_cfg["N"], M=grid_cfg["M"], **grid_cfg.get("base", {}))
    else:
        base = SynthHyperparams(**grid_cfg["base"])
    grid = hyper_grid(base, **grid_cfg.get("axes", {}))
    target = moments(io.load_words(args.target).words)
    if base.N != target.cell_means.size:
        raise DataError(f"grid N={base.N} but target corpus has {target.cell_means.size} cells")
    best, rep, reports = fit_hyperparams(target, grid, args.words_per_eval, args.seed)
    if args.out:
        io.write_table(
            args.out,
            ["point", *[k for k in grid_cfg.get("axes", {})], "qq_length", "qq_mean", "qq_pair", "combined"],
            ([idx, *[getattr(h, k) for k in grid_cfg.get("axes", {})],
              r.qq_length, r.qq_mean, r.qq_pair, r.combined]
             for idx, (h, r) in enumerate(zip(grid, reports))),
        )
    return _summary(command="fit", n_points=len(grid), best=best.to_dict(),
                    qq_length=rep.qq_length, qq_mean=rep.qq_mean, qq_pair=rep.qq_pair,
                    combined=rep.combined)


def cmd_match(args):
    if len(args.models) < 2:
        raise UsageError("match needs at least two model or ground-truth files")
    strengths = [_load_strengths(p) for p in args.models]
    shapes = {w.shape for w in strengths}
    if len(shapes) != 1:
        raise DataError(f"models have different shapes: {sorted(shapes)}")
    reports = {}
    n = len(strengths)
    dcs = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            reports[(i, j)] = rep = match_strengths(strengths[i], strengths[j])
            dcs[i, j] = dcs[j, i] = rep.delta_cs
    if args.out:
        io.save_match_reports(args.out, reports, list(args.models))
    return _summary(command="match", models=list(args.models), delta_cs=dcs)


def _trial_duration(corpus_or_none, starts, bin_ms_word):
    if corpus_or_none is not None and corpus_or_none.trial_duration_ms:
        return float(corpus_or_none.trial_duration_ms)
    return float(starts.max() + (bin_ms_word or 1.0)) if starts.size else 1.0


def _psths(Z, trials, starts, duration, bin_ms):
    out = []
    for a in range(Z.shape[1]):
        rows = np.flatnonzero(Z[:, a])
        trace = EventTrace(list(zip(trials[rows].tolist(), starts[rows].tolist())), duration)
        out.append(psth(trace, bin_ms))
    return np.array(out)


def cmd_metrics(args):
    mf = io.load_model(args.model)
    W = mf.params.strengths()
    N, M = W.shape
    Z, trials, starts = io.read_assignments(args.assignments, M)
    corpus = io.load_words(args.corpus, n_cells=N) if args.corpus else None
    if corpus is not None and corpus.words.shape[0] != Z.shape[0]:
        raise DataError("assignments and corpus have different word counts")
    duration = _trial_duration(corpus, starts, corpus.bin_ms if corpus else None)
    psths = _psths(Z, trials, starts, duration, args.bin_ms)

    rx = np.full(M, np.nan)
    if args.peer_model:
        if len(args.peer_model) != len(args.peer_assignments or []):
            raise UsageError("each --peer-model needs a matching --peer-assignments")
        strengths, all_psths = [W], [psths]
        for pm, pa in zip(args.peer_model, args.peer_assignments):
            pw = io.load_model(pm).params.strengths()
            pz, pt, ps = io.read_assignments(pa, pw.shape[1])
            strengths.append(pw)
            all_psths.append(_psths(pz, pt, ps, duration, args.bin_ms))
        rx, _, _ = cross_model_robustness(strengths, all_psths)

    types = None
    if args.cell_types:
        header, rows = io.read_table(args.cell_types)
        types = np.array([r[1] for r in sorted(rows, key=lambda r: int(r[0]))])
        if types.size != N:
            raise DataError(f"cell type table lists {types.size} cells, model has {N}")
        kinds = sorted(set(types.tolist()))
        if len(kinds) != 2:
            raise DataError(f"heterogeneity needs exactly two cell types, got {kinds}")

    dpy = np.full(M, np.nan)
    if args.null_rates:
        if corpus is None or corpus.step_ms is None:
            raise UsageError("--null-rates needs a binned --corpus")
        rate_starts, rates = io.read_null_rates(args.null_rates, N)
        step = corpus.step_ms
        n_steps = int(round(duration / step))
        row_of = {int(round(s / step)): r for r, s in enumerate(rate_starts)}
        idx = np.rint(starts / step).astype(np.int64)
        missing = set(np.unique(idx).tolist()) - set(row_of)
        if missing:
            raise DataError(f"null-rate table lacks {len(missing)} window starts")
        p_null = np.array([np.exp(null_word_logprob(rates[row_of[k]], y))
                           for k, y in zip(idx, corpus.words)])
        for a in range(M):
            on = Z[:, a] == 1
            counts = np.bincount(idx[on], minlength=n_steps)[:n_steps].astype(float)
            sums = np.bincount(idx[on], weights=p_null[on], minlength=n_steps)[:n_steps]
            null_trace = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
            if counts.any():
                dpy[a] = delta_py(counts, null_trace, args.bin_ms, base_ms=step)

    rows = []
    for a in range(M):
        ms = determine_members(W[:, a], a)
        n_in = ms.members.size
        cm = crispness(W[:, a], ms) if 0 < n_in < N else float("nan")
        h = float("nan")
        if types is not None and n_in:
            member_types = types[ms.members]
            h = heterogeneity(int((member_types == kinds[0]).sum()),
                              int((member_types == kinds[1]).sum()))
        rows.append([args.model, a, int(Z[:, a].sum()), n_in,
                     ";".join(map(str, ms.members)), cm, rx[a], h, dpy[a]])
    io.write_table(args.out, ["model", "assembly", "activations", "n_members", "members",
                              "crispness", "robustness", "heterogeneity", "delta_py"], rows)
    return _summary(command="metrics", out=args.out, n_assemblies=M,
                    mean_crispness=float(np.nanmean([r[5] for r in rows])) if any(
                        np.isfinite(r[5]) for r in rows) else None)


def cmd_coactivity(args):
    M = io.load_model(args.model).params.n_latents
    Z, _, _ = io.read_assignments(args.assignments, M)
    counts, pairs = coactivity_stats(Z)
    rows = []
    for a in range(M):
        for b in range(a + 1, M):
            rows.append([a, b, int(counts[a]), int(counts[b]), int(pairs[a, b])])
    io.write_table(args.out, ["assembly_a", "assembly_b", "count_a", "count_b", "coactive"], rows)
    top = sorted(rows, key=lambda r: -r[4])[:5]
    return _summary(command="coactivity", out=args.out, activations=counts,
                    partnered=pairs.sum(axis=1), top_pairs=[r[:2] + r[4:] for r in top])


def cmd_export(args):
    kind, arrays, meta = io.read_container(args.input)
    if kind == "model":
        mf = io.load_model(args.input)
        P, R = mf.params.P, mf.params.R
        header = ["cell", "R"] + [f"P_{a}" for a in range(P.shape[1])]
        rows = ([i, R[i], *P[i]] for i in range(P.shape[0]))
    elif kind == "ground_truth":
        gt = io.load_ground_truth(args.input)
        header = ["cell", "R"] + [f"P_{a}" for a in range(gt.P.shape[1])] + [
            f"S_{a}" for a in range(gt.S.shape[1])]
        rows = ([i, gt.R[i], *gt.P[i], *gt.S[i]] for i in range(gt.P.shape[0]))
    elif kind == "dataset":
        Z, Y = arrays["Z"], arrays["Y"]
        header = ["word"] + [f"z_{a}" for a in range(Z.shape[1])] + [f"y_{i}" for i in range(Y.shape[1])]
        rows = ([t, *Z[t], *Y[t]] for t in range(Z.shape[0]))
    elif kind == "corpus":
        c = io.load_words(args.input)
        header = ["word", "trial", "bin_start_ms"] + [f"y_{i}" for i in range(c.n_cells)]
        trials = c.trials if c.trials is not None else np.zeros(c.words.shape[0], dtype=int)
        starts = c.starts_ms if c.starts_ms is not None else np.arange(c.words.shape[0], dtype=float)
        rows = ([t, trials[t], starts[t], *c.words[t]] for t in range(c.words.shape[0]))
    elif kind == "match":
        reports, ids = io.load_match_reports(args.input)
        header = ["model_a", "model_b", "assembly_a", "assembly_b", "cs", "unmatched_cs", "delta_cs"]
        rows = ([ids[i], ids[j], a, rep.assignment[a], rep.matched_cs[a], rep.unmatched_diag_cs[a],
                 rep.delta_cs]
                for (i, j), rep in sorted(reports.items()) for a in range(rep.assignment.size))
    else:
        raise DataError(f"cannot export a {kind!r} container")
    io.write_table(args.out, header, rows)
    return _summary(command="export", kind=kind, out=args.out)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cellassembly", description="Binary latent variable cell-assembly toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="synthesize a ground-truth model")
    s.add_argument("--preset", choices=["movie", "white-noise"], default="movie")
    s.add_argument("--hyper", help="JSON file with all SynthHyperparams fields")
    s.add_argument("--cells", type=int, default=55)
    s.add_argument("--latents", type=int, default=55)
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a hyperparameter")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("gen", help="generate (z, y) pairs from a ground truth")
    s.add_argument("--gt", required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen)

    s = sub.add_parser("bin", help="bin a spike-event file into spike words")
    s.add_argument("--events", required=True)
    s.add_argument("--bin-ms", type=float, default=5.0)
    s.add_argument("--step-ms", type=float, default=1.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_bin)

    s = sub.add_parser("train", help="train a model with stochastic EM")
    s.add_argument("--corpus", required=True, help="corpus or dataset file")
    s.add_argument("--latents", type=int, required=True)
    s.add_argument("--prior", choices=sorted(PRIORS), default="binomial")
    s.add_argument("--passes", type=int, default=3)
    s.add_argument("--lr", type=float, default=0.1)
    s.add_argument("--lr-decay", type=float, default=0.0)
    s.add_argument("--order", choices=["shuffled", "sequential"], default="shuffled")
    s.add_argument("--init-silence", type=float, default=LearnConfig.init_silence)
    s.add_argument("--init-jitter", type=float, default=LearnConfig.init_jitter_sd)
    s.add_argument("--q-init", type=float, default=None)
    s.add_argument("--i0", type=int, default=9)
    s.add_argument("--imax", type=int, default=10)
    s.add_argument("--half", choices=["first", "second"], help="train on one half of the words")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", help="MAP latent assignments for every word")
    s.add_argument("--model", required=True)
    s.add_argument("--corpus", required=True)
    s.add_argument("--prior", choices=sorted(PRIORS))
    s.add_argument("--i0", type=int, default=9)
    s.add_argument("--imax", type=int, default=10)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("moments", help="spike-word moment summary")
    s.add_argument("--corpus", required=True)
    s.add_argument("--compare", help="second corpus; report QQ values against it")
    s.add_argument("--out")
    s.set_defaults(func=cmd_moments)

    s = sub.add_parser("fit", help="grid-search synthesis hyperparameters to a target corpus")
    s.add_argument("--target", required=True)
    s.add_argument("--grid", required=True, help="JSON: preset/N/M or base, plus axes")
    s.add_argument("--words-per-eval", type=int, default=50_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("match", help="Hungarian matching of assemblies between models")
    s.add_argument("models", nargs="+", help="model or ground-truth files")
    s.add_argument("--out")
    s.set_defaults(func=cmd_match)

    s = sub.add_parser("metrics", help="per-assembly crispness, robustness, heterogeneity, dPy")
    s.add_argument("--model", required=True)
    s.add_argument("--assignments", required=True)
    s.add_argument("--corpus")
    s.add_argument("--null-rates")
    s.add_argument("--cell-types", help="CSV cell,type with exactly two types")
    s.add_argument("--peer-model", action="append")
    s.add_argument("--peer-assignments", action="append")
    s.add_argument("--bin-ms", type=float, default=50.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("coactivity", help="assembly activation and co-activation counts")
    s.add_argument("--model", required=True)
    s.add_argument("--assignments", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_coactivity)

    s = sub.add_parser("export", help="write any container as a CSV table")
    s.add_argument("input")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"cellassembly: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"cellassembly: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (GuardError, FloatingPointError, OverflowError) as exc:
        print(f"cellassembly: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"cellassembly: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
