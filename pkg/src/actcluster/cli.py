"""Command line interface: run the pipeline, generate synthetic data,
convert WISDM-v1 raw files, and reproduce the four-setting comparison.

A config file (flat ``key = value`` lines, UTF-8) can preset any flag;
explicit CLI flags override file values.
"""

from __future__ import annotations

import dataclasses
import json
import sys

import click

from . import data as data_mod
from .pipeline import PipelineConfig, evaluate


def _parse_config_file(path):
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise click.ClickException(
                    f"{path}:{lineno}: expected key = value, got {line!r}")
            key, _, val = line.partition("=")
            values[key.strip()] = val.strip()
    return values


_CONFIG_FIELDS = {f.name: f.type for f in dataclasses.fields(PipelineConfig)}


def _coerce(name, raw):
    if raw.lower() in ("none", "null"):
        return None
    if raw.lower() in ("true", "false"):
        return raw.lower() == "true"
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            pass
    return raw


def build_config(config_file=None, **overrides) -> PipelineConfig:
    values = {}
    if config_file:
        for key, raw in _parse_config_file(config_file).items():
            if key not in _CONFIG_FIELDS:
                raise click.ClickException(f"unknown config key {key!r}")
            values[key] = _coerce(key, raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return PipelineConfig(**values)


@click.group()
def main():
    """Unsupervised activity clustering from wearable-sensor data."""


@main.command()
@click.option("--data", "data_path", required=True,
              type=click.Path(exists=True), help="canonical dataset file")
@click.option("--k", type=int, default=None, help="number of clusters "
              "(default: number of label classes)")
@click.option("--setting", type=click.Choice(["sdep", "sindep"]), default=None)
@click.option("--granularity", type=click.Choice(["window", "point", "both"]),
              default="both", help="which metrics to print (both are always "
              "computed)")
@click.option("--step", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--no-umap", is_flag=True, help="cluster the 32-d latents "
              "directly")
@click.option("--no-filter", is_flag=True, help="disable label filtering")
@click.option("--gmm", is_flag=True, help="cluster with a GMM instead of the "
              "HMM")
@click.option("--baseline", is_flag=True, help="pared-down variant: no UMAP, "
              "no filtering, step 100")
@click.option("--mask-semantics", type=click.Choice(["loss", "half"]),
              default=None)
@click.option("--transition-semantics",
              type=click.Choice(["self", "complement"]), default=None)
@click.option("--self-transition", type=float, default=None,
              help="override the estimated self-transition probability")
@click.option("--dimreduce", type=click.Choice(["umap", "none", "mlp"]),
              default=None)
@click.option("--config", "config_file", type=click.Path(exists=True),
              default=None, help="flat key = value config file")
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="write the full results JSON here")
def run(data_path, k, setting, granularity, step, seed, no_umap, no_filter,
        gmm, baseline, mask_semantics, transition_semantics, self_transition,
        dimreduce, config_file, out_path):
    """Cluster a canonical dataset and report ACC/NMI/ARI/F1."""
    config = build_config(
        config_file, k=k, setting=setting, step=step, seed=seed,
        mask_semantics=mask_semantics,
        transition_semantics=transition_semantics,
        self_transition=self_transition,
        dimreduce="none" if no_umap else dimreduce,
        no_filter=True if no_filter else None,
        use_gmm=True if gmm else None)
    recordings, spec = data_mod.load_canonical(data_path)
    record = evaluate(config, recordings, dataset_name=spec.name,
                      use_baseline=baseline)
    grans = ["window", "point"] if granularity == "both" else [granularity]
    for gran in grans:
        rep = record.reports[gran]
        click.echo(f"{record.setting} / {gran}-wise:  "
                   + "  ".join(f"{name.upper()} {val * 100:.2f}"
                               for name, val in rep.as_dict().items()))
    click.echo(f"phases (s): " + "  ".join(
        f"{k2} {v:.1f}" for k2, v in record.timing.items() if k2 != "per_point"))
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(record.to_json())
        click.echo(f"wrote {out_path}")


@main.command()
@click.option("--classes", "n_classes", type=int, default=3)
@click.option("--subjects", "n_subjects", type=int, default=2)
@click.option("--channels", "n_channels", type=int, default=3)
@click.option("--span-len", type=int, default=512)
@click.option("--spans", "n_spans", type=int, default=6)
@click.option("--offset-scale", type=float, default=0.0)
@click.option("--noise", "noise_std", type=float, default=0.1)
@click.option("--seed", type=int, default=0)
@click.option("--segmented", is_flag=True, help="record each activity bout "
              "as its own span (windows never mix classes)")
@click.option("--out", "out_path", required=True, type=click.Path())
def synth(n_classes, n_subjects, n_channels, span_len, n_spans, offset_scale,
          noise_std, seed, segmented, out_path):
    """Generate a synthetic canonical dataset."""
    recordings = data_mod.generate_synthetic(
        n_classes=n_classes, n_subjects=n_subjects, n_channels=n_channels,
        span_len=span_len, n_spans=n_spans, offset_scale=offset_scale,
        noise_std=noise_std, seed=seed, segment_activities=segmented)
    data_mod.write_canonical(out_path,
                             data_mod.recordings_to_rows(recordings),
                             n_channels)
    total = sum(r.n_points for r in recordings)
    click.echo(f"wrote {out_path}: {len(recordings)} subjects, "
               f"{total} time points")


@main.command("adapt-wisdm")
@click.argument("raw", type=click.Path(exists=True))
@click.argument("out", type=click.Path())
def adapt_wisdm(raw, out):
    """Convert a WISDM-v1 raw file to the canonical format."""
    n_rows, n_skipped = data_mod.adapt_wisdm_v1(raw, out)
    click.echo(f"wrote {out}: {n_rows} rows")
    if n_skipped:
        click.echo(f"warning: skipped {n_skipped} unparseable rows",
                   err=True)


@main.command()
@click.option("--data", "data_path", required=True,
              type=click.Path(exists=True))
@click.option("--k", type=int, default=None)
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_path", type=click.Path(), default=None)
def table2(data_path, k, seed, out_path):
    """Four-setting comparison (subject-dep/indep x window/point) with the
    pared-down baseline."""
    recordings, spec = data_mod.load_canonical(data_path)
    results = {}
    for setting in ("sdep", "sindep"):
        config = PipelineConfig(k=k, setting=setting, seed=seed)
        record = evaluate(config, recordings, dataset_name=spec.name,
                          use_baseline=True)
        for gran in ("window", "point"):
            col = f"{gran}-wise {record.setting}"
            results[col] = {m: round(v * 100, 2) for m, v in
                            record.reports[gran].as_dict().items()}
    metrics_names = ["acc", "nmi", "ari", "f1"]
    cols = list(results)
    width = max(len(c) for c in cols) + 2
    click.echo(" " * 6 + "".join(c.rjust(width) for c in cols))
    for m in metrics_names:
        row = m.upper().ljust(6)
        row += "".join(f"{results[c][m]:>{width}.2f}" for c in cols)
        click.echo(row)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            json.dump({"dataset": spec.name, "results": results}, fh,
                      sort_keys=True, indent=2)
        click.echo(f"wrote {out_path}")


if __name__ == "__main__":
    sys.exit(main())
