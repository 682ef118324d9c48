"""Command line interface for the facefront toolkit.

Subcommands:

  gen-data     build a seeded synthetic dataset container
  pretrain-r   fit the coefficient regressor, save its weights
  pretrain-c   fit the identity recognizer, save its weights
  train        full staged run (pretrains plus joint), or resume
  eval         measure a checkpoint on a dataset, write key=value report
  ablate       retrain every component-removal variant, write the table
  export-grid  qualitative PGM sheet (input | frontal | output | masked)
  inspect      list record names and shapes of any container file

Config files hold one `key=value` per line; `#` starts a comment. Keys
name dataclass fields: dataset fields for gen-data, training fields for
the training commands. Flags given on the command line win over the
file. Exit codes: 0 success, 1 usage or bad configuration, 2 malformed
container data. All outputs are written atomically.
"""

import argparse
import dataclasses
import os
import sys
import tempfile

import numpy as np

from . import container, evaluation, synthdata, training


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on usage errors; the contract here
    reserves 2 for malformed container data, so remap to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, "%s: error: %s\n" % (self.prog, message))


# ---------------------------------------------------------------------------
# configuration files


def parse_config_file(path):
    """Read `key=value` lines into a dict of raw strings."""
    out = {}
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError("%s:%d: expected key=value" % (path, lineno))
            key, value = line.split("=", 1)
            key = key.strip()
            if not key:
                raise ValueError("%s:%d: empty key" % (path, lineno))
            out[key] = value.strip()
    return out


_TRUE_WORDS = ("1", "true", "yes", "on")
_FALSE_WORDS = ("0", "false", "no", "off")


def _coerce(key, text, default):
    if isinstance(default, bool):
        low = text.lower()
        if low in _TRUE_WORDS:
            return True
        if low in _FALSE_WORDS:
            return False
        raise ValueError("%s: expected a boolean, got %r" % (key, text))
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        return tuple(int(part) for part in text.split(","))
    raise ValueError("%s: unsupported config key" % key)


def dataclass_kwargs(cls, cfgmap, skip=()):
    """Map raw config strings onto the fields of a settings dataclass."""
    fieldmap = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, text in cfgmap.items():
        if key in skip or key not in fieldmap:
            raise ValueError(
                "unknown or unsupported config key %r for %s" % (key, cls.__name__)
            )
        try:
            kwargs[key] = _coerce(key, text, fieldmap[key].default)
        except ValueError as exc:
            raise ValueError("config key %s: %s" % (key, exc))
    return kwargs


def _load_config_map(args):
    if getattr(args, "config", None):
        return parse_config_file(args.config)
    return {}


def _dataset_spec(args):
    kwargs = dataclass_kwargs(synthdata.DatasetSpec, _load_config_map(args))
    if args.seed is not None:
        kwargs["seed"] = args.seed
    return synthdata.DatasetSpec(**kwargs)


def _parse_stage_epochs(text):
    parts = tuple(int(p) for p in text.split(","))
    if len(parts) != training.N_STAGES:
        raise ValueError(
            "--stage-epochs needs %d comma-separated counts" % training.N_STAGES
        )
    return parts


def _train_config(args):
    kwargs = dataclass_kwargs(
        training.TrainConfig, _load_config_map(args), skip=("stage_weights",)
    )
    if args.seed is not None:
        kwargs["seed"] = args.seed
    if getattr(args, "stage_epochs", None):
        kwargs["stage_epochs"] = _parse_stage_epochs(args.stage_epochs)
    if getattr(args, "ablate", None):
        kwargs[args.ablate] = True
    return training.TrainConfig(**kwargs)


def _write_text(path, lines):
    payload = "\n".join(lines)
    if lines:
        payload += "\n"
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args):
    spec = _dataset_spec(args)
    dataset = synthdata.build_dataset(spec)
    synthdata.write_dataset(dataset, args.out)
    print("dataset=%s images=%d hash=%s" % (
        args.out, dataset.x.shape[0], dataset.content_hash()
    ))
    return 0


def cmd_pretrain_r(args):
    config = _train_config(args)
    dataset = synthdata.read_dataset(args.dataset)
    res = training.pretrain_r(config, dataset, log=print)
    training.save_net(res.params, dataset.spec, args.out)
    print("net=%s nme_heldout=%.6f nme_baseline=%.6f" % (
        args.out, res.metric, res.baseline
    ))
    return 0


def cmd_pretrain_c(args):
    config = _train_config(args)
    dataset = synthdata.read_dataset(args.dataset)
    res = training.pretrain_c(config, dataset, log=print)
    training.save_net(res.params, dataset.spec, args.out)
    print("net=%s acc_heldout=%.6f acc_chance=%.6f" % (
        args.out, res.metric, res.baseline
    ))
    return 0


def cmd_train(args):
    dataset = synthdata.read_dataset(args.dataset)
    lines = []

    def log(line):
        print(line)
        lines.append(line)

    if args.checkpoint:
        if args.config or args.seed is not None or args.stage_epochs or args.ablate:
            raise ValueError(
                "--checkpoint resumes with the stored configuration; "
                "drop the other configuration flags"
            )
        state = training.resume(args.checkpoint)
        state = training.train_joint(state.config, dataset, state=state, log=log)
    else:
        config = _train_config(args)
        res_r = training.pretrain_r(config, dataset, log=log)
        res_c = training.pretrain_c(config, dataset, log=log)
        state = training.train_joint(
            config, dataset, res_r.params, res_c.params, log=log
        )
    training.checkpoint(state, args.out)
    _, _, _, heldout = training.heldout_indices(dataset)
    final = training.heldout_l1(state, dataset, heldout)
    summary = "checkpoint=%s l1_start=%.6f l1_final=%.6f" % (
        args.out, state.l1_start, final
    )
    log(summary)
    if args.log:
        _write_text(args.log, lines)
    return 0


def cmd_eval(args):
    state = training.resume(args.checkpoint)
    dataset = synthdata.read_dataset(args.dataset)
    modes = (args.mode,) if args.mode else evaluation.MODES
    report = evaluation.evaluate(state, dataset, modes=modes)
    evaluation.write_report(report, args.out)
    for line in report.to_lines():
        print(line)
    return 0


def cmd_ablate(args):
    config = _train_config(args)
    dataset = synthdata.read_dataset(args.dataset)
    table, hashes = evaluation.run_ablation(config, dataset, log=print)
    report = evaluation.EvalReport(
        ablation=table,
        extra=["dataset_hash/%s=%s" % (k, hashes[k]) for k in sorted(hashes)],
    )
    evaluation.write_report(report, args.out)
    for line in report.to_lines():
        print(line)
    return 0


def _grid_rows(dataset, count=8):
    """Held-out rows ordered by pose magnitude, most extreme first."""
    _, _, _, heldout = training.heldout_indices(dataset)
    order = np.argsort(-np.abs(dataset.yaw_deg[heldout]), kind="stable")
    return heldout[order][:count]


def cmd_export_grid(args):
    state = training.resume(args.checkpoint)
    dataset = synthdata.read_dataset(args.dataset)
    rows = _grid_rows(dataset)
    evaluation.export_grid(state, dataset, rows, args.out)
    print("grid=%s rows=%d" % (args.out, rows.size))
    return 0


def cmd_inspect(args):
    for name, shape in container.inspect_records(args.path):
        dims = "x".join(str(d) for d in shape) if shape else "scalar"
        print("%s %s" % (name, dims))
    return 0


# ---------------------------------------------------------------------------
# wiring


def _add_common(sub, dataset=False, out=False, config=False, seed=False):
    if dataset:
        sub.add_argument("--dataset", required=True, help="dataset container path")
    if out:
        sub.add_argument("--out", required=True, help="output path")
    if config:
        sub.add_argument("--config", help="key=value config file")
    if seed:
        sub.add_argument("--seed", type=int, help="override the seed")


def build_parser():
    parser = _Parser(prog="facefront", description=__doc__.splitlines()[0])
    subs = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = subs.add_parser("gen-data", help="build a synthetic dataset")
    _add_common(p, out=True, config=True, seed=True)
    p.set_defaults(func=cmd_gen_data)

    p = subs.add_parser("pretrain-r", help="pretrain the coefficient regressor")
    _add_common(p, dataset=True, out=True, config=True, seed=True)
    p.set_defaults(func=cmd_pretrain_r)

    p = subs.add_parser("pretrain-c", help="pretrain the identity recognizer")
    _add_common(p, dataset=True, out=True, config=True, seed=True)
    p.set_defaults(func=cmd_pretrain_c)

    p = subs.add_parser("train", help="run or resume the staged schedule")
    _add_common(p, dataset=True, out=True, config=True, seed=True)
    p.add_argument("--checkpoint", help="resume from this checkpoint")
    p.add_argument("--stage-epochs", help="per-stage epoch counts, e.g. 20,20,10")
    p.add_argument("--ablate", choices=training.DROP_SWITCHES,
                   help="train with one component removed")
    p.add_argument("--log", help="also write the epoch lines to this file")
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("eval", help="measure a checkpoint, write a report")
    _add_common(p, dataset=True, out=True)
    p.add_argument("--checkpoint", required=True, help="trained checkpoint")
    p.add_argument("--mode", choices=evaluation.MODES,
                   help="restrict rank-1 to one matching mode")
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("ablate", help="train all component-removal variants")
    _add_common(p, dataset=True, out=True, config=True, seed=True)
    p.add_argument("--stage-epochs", help="per-stage epoch counts, e.g. 2,2,1")
    p.set_defaults(func=cmd_ablate)

    p = subs.add_parser("export-grid", help="write a qualitative PGM sheet")
    _add_common(p, dataset=True, out=True)
    p.add_argument("--checkpoint", required=True, help="trained checkpoint")
    p.set_defaults(func=cmd_export_grid)

    p = subs.add_parser("inspect", help="list records of a container file")
    p.add_argument("path", help="any container file")
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except container.ContainerError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2
    except (ValueError, OSError, training.TrainingError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
