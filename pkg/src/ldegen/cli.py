"""Command-line pipeline: train-ae -> extract-latents -> train-lde -> generate -> eval / plot."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .autoencoder import ae_init, decode, encode, train_autoencoder
from .config import PRESETS, ConfigError, ExperimentConfig, load_config, preset_text
from .data import (SplitDataset, ToySpec, image_folder_load, mnist_load, read_points_csv, toy_sample,
                   write_points_csv)
from .evaluation import (bandwidth_grid_search, causality_check, format_csv, format_report,
                         held_out_nll, interpolation_loglik, parzen_point_logliks, mean_and_stderr)
from .lde import fit_standardization, lde_init, lde_log_density, lde_sample, train_lde
from .plot import image_grid, line_svg, scatter_svg, write_pgm

log = logging.getLogger("ldegen")


class CommandError(RuntimeError):
    pass


def load_dataset(cfg: ExperimentConfig) -> SplitDataset:
    d = cfg.data
    seed = cfg.seed("data")
    if d.kind == "toy":
        rng = np.random.default_rng(seed)
        s1, s2, s3 = (int(x) for x in rng.integers(0, 2 ** 63, size=3))
        spec = ToySpec()
        return SplitDataset(toy_sample(spec, d.toy_samples, s1), toy_sample(spec, d.validation_size, s2),
                            toy_sample(spec, d.test_size, s3), provenance="toy")
    if d.kind == "mnist":
        return mnist_load(d.path, d.validation_size, d.train_size or None, d.test_size, seed)
    return image_folder_load(d.path, cfg.image_shape, d.validation_size, d.test_size, seed)


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CommandError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")


def _load_latents(path) -> tuple[dict, dict[str, np.ndarray]]:
    config, arrays = ckpt.read_checkpoint(path)
    if config.get("kind") != "latents":
        raise CommandError(f"{path} is not a latent file")
    return config, arrays


# ---------------------------------------------------------------------------
# commands


def cmd_train_ae(cfg: ExperimentConfig, out: Path) -> Path:
    if cfg.data.kind == "toy":
        raise CommandError("train-ae needs image data; the toy grid is modelled by the LDE directly")
    data = load_dataset(cfg)
    model = ae_init(cfg.ae_config(data.train.shape[1]), cfg.seed("init"))
    schedule = cfg.mask_schedule()
    rows = []

    def progress(step, result):
        rows.append((step, result.loss, result.active_dim))
        if step % 500 == 0:
            log.info("ae step %d loss %.6f active_dim %d", step, result.loss, result.active_dim)

    o = cfg.optim
    train_autoencoder(model, data.train, cfg.train.ae_steps, schedule, o.batch_size, o.ae_learning_rate,
                      cfg.seed("shuffle"), o.beta1, o.beta2, o.epsilon, callback=progress)
    path = out / "ae.ckpt"
    ckpt.save_ae(path, model)
    _write_csv(out / "ae_loss.csv", ["step", "loss", "active_dim"], rows)
    return path


def cmd_extract_latents(cfg: ExperimentConfig, ae_path, out: Path) -> Path:
    model = ckpt.load_ae(ae_path)
    data = load_dataset(cfg)
    if data.train.shape[1] != model.config.input_dim:
        raise CommandError(f"dataset rows have {data.train.shape[1]} values, autoencoder expects "
                           f"{model.config.input_dim}")
    arrays = {name: encode(model, data.partition(name)) for name in ("train", "validation", "test")}
    config = {"kind": "latents", "latent_dim": model.config.latent_dim, "provenance": data.provenance,
              "image_shape": list(data.image_shape or ())}
    path = out / "latents.ckpt"
    ckpt.write_checkpoint(path, config, arrays)
    return path


def cmd_train_lde(cfg: ExperimentConfig, latents_path, out: Path) -> Path:
    if latents_path is not None:
        lcfg, arrays = _load_latents(latents_path)
        train = arrays["train"]
        if cfg.data.kind != "toy" and train.shape[1] != cfg.autoencoder.latent_dim:
            raise CommandError(f"latent file has D={train.shape[1]}, config expects "
                               f"D={cfg.autoencoder.latent_dim}")
    elif cfg.data.kind == "toy":
        train = load_dataset(cfg).train
    else:
        raise CommandError("train-lde needs --latents unless data.kind = toy")
    model = lde_init(cfg.lde_config(train.shape[1]), cfg.seed("init"))
    if cfg.lde.standardize:
        fit_standardization(model, train)
    rows = []

    def progress(step, loss):
        rows.append((step, loss))
        if step % 1000 == 0:
            log.info("lde step %d loss %.6f", step, loss)

    o = cfg.optim
    train_lde(model, train, cfg.train.lde_steps, o.batch_size, o.lde_learning_rate, cfg.seed("shuffle"),
              o.beta1, o.beta2, o.epsilon, callback=progress)
    path = out / "lde.ckpt"
    ckpt.save_lde(path, model)
    _write_csv(out / "lde_loss.csv", ["step", "loss"], rows)
    return path


def cmd_generate(cfg: ExperimentConfig, lde_path, ae_path, n: int, out: Path) -> Path:
    lde = ckpt.load_lde(lde_path)
    z = lde_sample(lde, n, cfg.seed("sample"))
    arrays = {"latents": z}
    config = {"kind": "samples", "latent_dim": lde.config.latent_dim, "count": n}
    if ae_path is not None:
        ae = ckpt.load_ae(ae_path)
        if ae.config.latent_dim != lde.config.latent_dim:
            raise CommandError(f"autoencoder D={ae.config.latent_dim} but LDE D={lde.config.latent_dim}")
        x = decode(ae, z)
        arrays["samples"] = x
        if cfg.data.kind != "toy" and x.shape[1] == cfg.data.image_height * cfg.data.image_width:
            write_pgm(out / "samples.pgm", image_grid(x[:100], cfg.image_shape, value_range=ae.config.data_range))
    else:
        arrays["samples"] = z
    if arrays["samples"].shape[1] == 2:
        write_points_csv(out / "samples.csv", arrays["samples"])
    path = out / "samples.ckpt"
    ckpt.write_checkpoint(path, config, arrays)
    return path


def _write_report(out: Path, stem: str, metrics: dict) -> None:
    (out / f"{stem}.txt").write_text(format_report(metrics))
    (out / f"{stem}.csv").write_text(format_csv(metrics))


def cmd_eval_parzen(cfg: ExperimentConfig, samples_path, out: Path) -> dict:
    config, arrays = ckpt.read_checkpoint(samples_path)
    if config.get("kind") != "samples":
        raise CommandError(f"{samples_path} is not a samples file")
    support = arrays["samples"]
    data = load_dataset(cfg)
    validation = data.validation[:cfg.eval.parzen_validation]
    sigma = bandwidth_grid_search(support, validation, cfg.bandwidth_grid())
    test_ll = parzen_point_logliks(support, data.test, [sigma])[0]
    metrics = {"bandwidth": sigma, "support_size": len(support), "test_points": len(data.test),
               "parzen_loglik": mean_and_stderr(test_ll)}
    _write_report(out, "parzen", metrics)
    return metrics


def cmd_eval_nll(cfg: ExperimentConfig, lde_path, latents_path, out: Path) -> dict:
    lde = ckpt.load_lde(lde_path)
    if latents_path is not None:
        _, arrays = _load_latents(latents_path)
        test = arrays["test"]
    elif cfg.data.kind == "toy":
        test = load_dataset(cfg).test
    else:
        raise CommandError("eval nll needs --latents unless data.kind = toy")
    if test.shape[1] != lde.config.latent_dim:
        raise CommandError(f"latents have D={test.shape[1]}, LDE has D={lde.config.latent_dim}")
    metrics = {"test_rows": len(test), "nll_per_dim": held_out_nll(lde, test),
               "loglik": mean_and_stderr(lde_log_density(lde, test))}
    _write_report(out, "nll", metrics)
    return metrics


def cmd_eval_interp(cfg: ExperimentConfig, ae_path, lde_path, index0: int, index1: int, out: Path) -> dict:
    ae = ckpt.load_ae(ae_path)
    lde = ckpt.load_lde(lde_path)
    data = load_dataset(cfg)
    curve = interpolation_loglik(ae, lde, data.test[index0], data.test[index1], cfg.eval.interp_alphas,
                                 decode_images=True)
    _write_csv(out / "interp_curve.csv", ["alpha", "loglik"], zip(map(float, curve.alphas), map(float, curve.loglik)))
    if data.image_shape is not None:
        row = np.vstack([data.test[index0], curve.images, data.test[index1]])
        write_pgm(out / "interp.pgm", image_grid(row, data.image_shape, columns=len(row),
                                                 value_range=ae.config.data_range))
    metrics = {f"loglik_alpha_{a:g}": float(v) for a, v in zip(curve.alphas, curve.loglik)}
    _write_report(out, "interp", metrics)
    return metrics


def cmd_eval_causality(cfg: ExperimentConfig, lde_path, trials: int | None, out: Path) -> dict:
    lde = ckpt.load_lde(lde_path)
    report = causality_check(lde, trials or cfg.eval.causality_trials, cfg.seed("sample"))
    metrics = {"passed": int(report.passed), "trials": report.trials}
    if report.counterexample:
        metrics.update({f"counterexample_{k}": v for k, v in report.counterexample.items()})
    _write_report(out, "causality", metrics)
    return metrics


def cmd_plot(input_path, target_path, out: Path, name: str = "plot.svg", title: str = "") -> Path:
    header, data = read_points_csv(input_path)
    path = out / name
    if header[:2] == ["x1", "x2"] or target_path is not None:
        target = read_points_csv(target_path)[1] if target_path is not None else None
        svg = scatter_svg(data if len(data) else None, target, title=title)
    else:
        series = {h: data[:, i] for i, h in enumerate(header[1:], start=1)}
        svg = line_svg(data[:, 0], series, title=title, xlabel=header[0])
    path.write_text(svg)
    return path


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ldegen", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="INI experiment config")
        p.add_argument("--seed", type=int, default=None, help="master seed (unsigned 64-bit)")
        p.add_argument("--out", default=None, help="output directory (default: [output] dir)")
        return p

    common(sub.add_parser("train-ae", help="train the autoencoder"))
    p = common(sub.add_parser("extract-latents", help="encode every split"))
    p.add_argument("--ae", required=True)
    p = common(sub.add_parser("train-lde", help="fit the latent density estimator"))
    p.add_argument("--latents", default=None)
    p = common(sub.add_parser("generate", help="sample latents and decode them"))
    p.add_argument("--lde", required=True)
    p.add_argument("--ae", default=None)
    p.add_argument("-n", type=int, default=None, help="sample count (default: [eval] parzen_samples)")

    ev = sub.add_parser("eval", help="evaluation reports").add_subparsers(dest="eval_command", required=True)
    p = common(ev.add_parser("parzen"))
    p.add_argument("--samples", required=True)
    p = common(ev.add_parser("nll"))
    p.add_argument("--lde", required=True)
    p.add_argument("--latents", default=None)
    p = common(ev.add_parser("interp"))
    p.add_argument("--ae", required=True)
    p.add_argument("--lde", required=True)
    p.add_argument("--index0", type=int, default=0)
    p.add_argument("--index1", type=int, default=1)
    p = common(ev.add_parser("causality"))
    p.add_argument("--lde", required=True)
    p.add_argument("--trials", type=int, default=None)

    p = common(sub.add_parser("plot", help="render a CSV as SVG"), config_required=False)
    p.add_argument("--input", required=True)
    p.add_argument("--target", default=None, help="target points drawn beneath the input points")
    p.add_argument("--name", default="plot.svg")
    p.add_argument("--title", default="")

    p = sub.add_parser("preset", help="print a bundled config preset")
    p.add_argument("name", choices=PRESETS)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        if args.command == "preset":
            sys.stdout.write(preset_text(args.name))
            return 0
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        if args.seed is not None:
            cfg.override_seed(args.seed)
        if args.command != "plot":
            cfg.validate()
        out = _out_dir(args.out or cfg.output.dir)
        if args.command == "train-ae":
            print(cmd_train_ae(cfg, out))
        elif args.command == "extract-latents":
            print(cmd_extract_latents(cfg, args.ae, out))
        elif args.command == "train-lde":
            print(cmd_train_lde(cfg, args.latents, out))
        elif args.command == "generate":
            print(cmd_generate(cfg, args.lde, args.ae, args.n or cfg.eval.parzen_samples, out))
        elif args.command == "eval":
            if args.eval_command == "parzen":
                metrics = cmd_eval_parzen(cfg, args.samples, out)
            elif args.eval_command == "nll":
                metrics = cmd_eval_nll(cfg, args.lde, args.latents, out)
            elif args.eval_command == "interp":
                metrics = cmd_eval_interp(cfg, args.ae, args.lde, args.index0, args.index1, out)
            else:
                metrics = cmd_eval_causality(cfg, args.lde, args.trials, out)
            sys.stdout.write(format_report(metrics))
        elif args.command == "plot":
            print(cmd_plot(args.input, args.target, out, args.name, args.title))
    except (ConfigError, CommandError, ckpt.CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"ldegen: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
