"""Command-line entry point.

    epidenoise [--config cfg.json] [--seed N] [--out DIR] [--threads N] <command> ...

Commands: dataset-gen, simulate, reconstruct, train, denoise, evaluate,
analyze, plot. Exit codes: 0 success, 2 configuration error, 3 data error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError, NumericalError

log = logging.getLogger("epidenoise")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _config(args):
    from .experiment import ExperimentConfig

    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = int(args.seed)
    for key in ("snr", "max_epochs", "motion", "stage", "psf_sigma", "nex_max"):
        val = getattr(args, key, None)
        if val is None:
            continue
        if key == "snr":
            cfg.snr_list = [float(s) for s in val]
        elif key == "max_epochs":
            cfg.train["max_epochs"] = int(val)
            cfg.train["patience"] = min(cfg.train["patience"], int(val) - 1) if int(val) > 1 else cfg.train["patience"]
        elif key == "motion":
            cfg.motion = bool(val)
        elif key == "stage":
            cfg.denoise_stage = val
        elif key == "psf_sigma":
            cfg.psf_sigma = float(val)
        elif key == "nex_max":
            cfg.nex_max = int(val)
    cfg.__post_init__()
    return cfg


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_dataset_gen(args):
    from .experiment import generate_dataset

    cfg = _config(args)
    ds = generate_dataset(cfg, _out(args))
    print(json.dumps(ds.manifest.counts))


def cmd_simulate(args):
    from .experiment import epi_trajectory, simulate_repetition, test_slices, SHAPE
    from .fieldio import save_field

    cfg = _config(args)
    out = _out(args)
    traj = epi_trajectory(cfg)
    for snr in cfg.snr_list:
        for ts in test_slices(cfg):
            for k in range(1, args.nex + 1):
                acq = simulate_repetition(cfg, ts, snr, k, traj)
                stem = f"snr{snr:g}_slice{ts.index}_rep{k}"
                save_field(out / f"kspace_{stem}", acq.kspace, domain="kspace")
                if acq.correction is not None:
                    save_field(out / f"correction_{stem}", acq.correction, dtype="f64")
            save_field(out / f"clean_snr{snr:g}_slice{ts.index}", ts.clean(snr), dtype="f64")
            save_field(out / f"mask_slice{ts.index}", ts.mask.astype(np.float64), dtype="f64")
    (out / "trajectory.json").write_text(json.dumps({"kx_actual": traj.kx_actual.tolist(),
                                                      "kx_target": traj.kx_target.tolist()}) + "\n")


def cmd_reconstruct(args):
    from .epi import reconstruct_epi
    from .experiment import epi_trajectory
    from .fieldio import load_field, save_field

    cfg = _config(args)
    k, meta = load_field(args.kspace)
    if meta.domain != "kspace":
        raise DataError(f"{args.kspace} holds {meta.domain} data, expected kspace")
    corr = None
    if args.correction:
        corr, _ = load_field(args.correction)
    traj = epi_trajectory(cfg, meta.width)
    images = [reconstruct_epi(k[i], traj, None if corr is None else corr[min(i, len(corr) - 1)])
              for i in range(meta.slices)]
    path = save_field(_out(args) / args.name, np.stack(images), domain="image")
    print(path)


def cmd_train(args):
    from .experiment import Dataset, DatasetManifest, ManifestEntry, generate_dataset, train_model
    from .fieldio import load_field

    cfg = _config(args)
    out = _out(args)
    dataset = None
    if args.dataset:
        import csv
        d = Path(args.dataset)
        noisy, _ = load_field(d / "train_noisy")
        clean, _ = load_field(d / "train_clean")
        with (d / "manifest.csv").open() as fh:
            entries = [ManifestEntry(int(r["example_id"]), int(r["slice_id"]), int(r["noise_map_id"]),
                                     r["component"], r["split"]) for r in csv.DictReader(fh)]
        dataset = Dataset(DatasetManifest(entries), noisy, clean)
    else:
        dataset = generate_dataset(cfg)

    def progress(row):
        log.info("epoch %d train %.6g val %.6g%s", row.epoch, row.train_loss, row.val_loss, " *" if row.is_best else "")

    model, history = train_model(cfg, dataset, out, progress)
    print(json.dumps({"epochs": len(history), "best_epoch": model.metadata.get("best_epoch"),
                      "best_val_loss": model.metadata.get("best_val_loss")}))


def cmd_denoise(args):
    from .denoiser import denoise, load_model
    from .fieldio import load_field, save_field

    model = load_model(args.model)
    data, meta = load_field(args.input)
    den, est = zip(*(denoise(model, s) for s in data))
    out = _out(args)
    save_field(out / f"{args.name}_denoised", np.stack(den), domain=meta.domain, spacing=meta.spacing_mm)
    save_field(out / f"{args.name}_noise_estimate", np.stack(est), domain=meta.domain, spacing=meta.spacing_mm)


def cmd_evaluate(args):
    from .denoiser import load_model
    from .experiment import run_experiment

    cfg = _config(args)
    model = load_model(args.model) if args.model else None
    stages = ("pre", "post") if args.both_stages else (cfg.denoise_stage,)
    res = run_experiment(cfg, model, _out(args), stages=stages)
    print(json.dumps({"rows": len(res["rows"]), "out": str(args.out)}))


def cmd_analyze(args):
    from .denoiser import denoise, load_model
    from .evaluation import intensity_profile, write_profile_csv
    from .experiment import multicoil_demo, residual_analysis, test_slices
    from .fieldio import save_field

    cfg = _config(args)
    out = _out(args)
    summary = {}
    ts = test_slices(cfg)[0]
    if args.model:
        model = load_model(args.model)
        res = residual_analysis(cfg, model, ts)
        summary["residual_ratios"] = res["ratios"]
        a = res["analysis"]
        save_field(out / "residual_mean_estimate", a.mean_estimate, dtype="f64")
        save_field(out / "residual_denoised_std", a.denoised_std, dtype="f64")
        noisy = ts.clean(cfg.residual_snr) + np.random.default_rng(cfg.seed).standard_normal(ts.base.shape)
        den, _ = denoise(model, noisy)
        for name, img in (("clean", ts.clean(cfg.residual_snr)), ("noisy", noisy), ("denoised", den)):
            write_profile_csv(intensity_profile(img, args.row, one_based=True), out / f"profile_{name}.csv")
    demo = multicoil_demo(cfg)
    for name, img in demo["images"].items():
        save_field(out / name, img, dtype="f64")
    summary["adc_mean_in_mask"] = float(demo["images"]["adc"][demo["mask"] & demo["valid"]].mean())
    (out / "analysis.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary))


def cmd_plot(args):
    from .plotting import export_plot

    denoised = {}
    for item in args.denoised or []:
        label, _, value = item.partition("=")
        try:
            denoised[label] = float(value)
        except ValueError as exc:
            raise ConfigurationError(f"--denoised expects LABEL=VALUE, got {item!r}") from exc
    path = export_plot(args.curves, _out(args) / args.name, denoised, ylabel=args.ylabel)
    print(path)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="epidenoise", description=__doc__.split("\n")[0])
    p.add_argument("--config", help="experiment configuration JSON")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--threads", type=int, default=1, help="BLAS threads (1 keeps training bit-reproducible)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("dataset-gen", help="generate the training/validation dataset")
    s.set_defaults(func=cmd_dataset_gen)

    s = sub.add_parser("simulate", help="simulate EPI k-space of the test slices")
    s.add_argument("--snr", nargs="+")
    s.add_argument("--nex", type=int, default=1)
    s.add_argument("--motion", action="store_true", default=None)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("reconstruct", help="reconstruct an EPI k-space field")
    s.add_argument("kspace")
    s.add_argument("--correction", help="ghost correction phase field")
    s.add_argument("--name", default="reconstructed")
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("train", help="train the residual denoiser")
    s.add_argument("--dataset", help="directory written by dataset-gen (generated on the fly if omitted)")
    s.add_argument("--max-epochs", dest="max_epochs", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("denoise", help="denoise every slice of a field file")
    s.add_argument("input")
    s.add_argument("--model", required=True)
    s.add_argument("--name", default="output")
    s.set_defaults(func=cmd_denoise)

    s = sub.add_parser("evaluate", help="averaging vs denoising experiment")
    s.add_argument("--model")
    s.add_argument("--snr", nargs="+")
    s.add_argument("--nex-max", dest="nex_max", type=int)
    s.add_argument("--motion", action="store_true", default=None)
    s.add_argument("--psf-sigma", dest="psf_sigma", type=float)
    s.add_argument("--stage", choices=["pre", "post"])
    s.add_argument("--both-stages", action="store_true")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("analyze", help="residual analysis, profiles and multicoil/ADC demo")
    s.add_argument("--model")
    s.add_argument("--row", type=int, default=120, help="1-based profile row")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("plot", help="plot NEX curve CSVs")
    s.add_argument("curves", nargs="+")
    s.add_argument("--denoised", nargs="*", help="LABEL=VALUE horizontal lines")
    s.add_argument("--ylabel", default="PSNR [dB]")
    s.add_argument("--name", default="curves.png")
    s.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from threadpoolctl import threadpool_limits

    try:
        with threadpool_limits(limits=max(1, args.threads)):
            args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
