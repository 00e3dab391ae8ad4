//! Python plotting scripts over a finished run. Nothing is rendered here;
//! the scripts need pandas and matplotlib.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::Kind;
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

pub const PLOTS_DIR: &str = "plots";

const PRELUDE: &str = r#"import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

HERE = os.path.dirname(os.path.abspath(__file__))
RUN = os.path.dirname(HERE)


def path(rel):
    return os.path.join(RUN, rel)


def save(fig, name):
    out = os.path.join(HERE, name)
    fig.savefig(out, dpi=150, bbox_inches="tight")
    print(out)
"#;

fn py_list(items: &[String]) -> String {
    let quoted: Vec<String> = items.iter().map(|s| format!("{s:?}")).collect();
    format!("[{}]", quoted.join(", "))
}

fn gap_trend_script(aggregate: &str) -> String {
    format!(
        r#"{PRELUDE}
agg = pd.read_csv(path({aggregate:?}))
fig, ax = plt.subplots()
for (label, theta), g in agg.groupby(["label", "theta"]):
    g = g.sort_values("n")
    ax.errorbar(g["n"], g["mean_gap_integral"], yerr=g["se_gap_integral"], marker="o",
                capsize=3, label=f"{{label}}, θ={{theta}}")
ax.set_xscale("log", base=2)
ax.set_xlabel("n")
ax.set_ylabel("mean n^-d ∫(v⁺ − v⁻)")
ax.set_title("gap integral against box size")
ax.legend()
save(fig, "gap_trend.png")
"#
    )
}

fn scaling_script(aggregate: &str, slopes: &[(f64, f64)]) -> String {
    let mut table = String::from("{");
    for (theta, slope) in slopes {
        let _ = write!(table, "{theta:?}: {slope:?}, ");
    }
    table.push('}');
    format!(
        r#"{PRELUDE}
# fitted exponents copied from the verdict report
SLOPES = {table}

agg = pd.read_csv(path({aggregate:?}))
agg = agg[agg["label"] == "scaling"]
fig, ax = plt.subplots()
for theta, g in agg.groupby("theta"):
    g = g.sort_values("n")
    ax.errorbar(g["n"], g["mean_abs_D_n"], yerr=g["se_abs_D_n"], marker="o", capsize=3,
                label=f"θ={{theta}}, slope {{SLOPES.get(theta, float('nan')):.3f}}")
ax.set_xscale("log")
ax.set_yscale("log")
ax.set_xlabel("n")
ax.set_ylabel("mean |D_n|")
ax.set_title("energy gap scaling")
ax.legend()
save(fig, "scaling.png")
"#
    )
}

fn histogram_script(aggregate: &str, label: &str, cells: &[String]) -> String {
    format!(
        r#"{PRELUDE}
CELLS = {cells}

agg = pd.read_csv(path({aggregate:?}))
agg = agg[agg["label"] == {label:?}]
frames = [pd.read_csv(path(c)) for c in CELLS]
if not frames:
    sys.exit("no cell CSVs")
data = pd.concat(frames)
for (theta, n), g in data.groupby(["theta", "n"]):
    dim = int(g["dim"].iloc[0])
    z = g["F_hat"].dropna().to_numpy() / np.sqrt(float(n) ** dim)
    if len(z) < 2:
        continue
    sd = z.std(ddof=1)
    row = agg[(agg["theta"] == theta) & (agg["n"] == n)]
    fig, ax = plt.subplots()
    ax.hist(z, bins="auto", density=True, alpha=0.6, label="F̂_n / √|Λn|")
    if sd > 0:
        xs = np.linspace(z.min() - sd, z.max() + sd, 400)
        ax.plot(xs, np.exp(-xs**2 / (2 * sd**2)) / (sd * np.sqrt(2 * np.pi)),
                label=f"N(0, {{sd**2:.3g}})")
    if len(row):
        ax.set_title(f"θ={{theta}}, n={{n}}: mean {{row['mean_F_hat'].iloc[0]:.3g}}"
                     f" ± {{row['se_F_hat'].iloc[0]:.2g}}")
    ax.legend()
    save(fig, f"fhat_hist_theta{{theta}}_n{{n}}.png")
"#,
        cells = py_list(cells)
    )
}

fn sandwich_script(table: &str) -> String {
    format!(
        r#"{PRELUDE}
rows = pd.read_csv(path({table:?}))
fig, ax = plt.subplots()
ax.scatter(rows["upper"], rows["delta_energy"], s=8, label="ΔG₁ against θh∫v⁺(ω)")
ax.scatter(rows["lower"], rows["delta_energy"], s=8, label="ΔG₁ against θh∫v⁺(ω − h)")
lim = [min(rows["lower"].min(), rows["delta_energy"].min()),
       max(rows["upper"].max(), rows["delta_energy"].max())]
ax.plot(lim, lim, color="black", linewidth=0.8)
ax.set_xlabel("bound")
ax.set_ylabel("ΔG₁")
ax.set_title("Lemma A2 sandwich: lower ≤ ΔG₁ ≤ upper")
ax.legend()
save(fig, "sandwich.png")
"#
    )
}

/// The scripts for one manifest, as (file name, contents).
fn scripts(m: &RunManifest) -> Vec<(String, String)> {
    if m.kind == Kind::Lemmas {
        return m
            .tables
            .iter()
            .find(|t| t.ends_with("monotonicity.csv"))
            .map(|t| vec![("sandwich.py".to_string(), sandwich_script(t))])
            .unwrap_or_default();
    }
    let Some(aggregate) = m.aggregate_csv.as_deref() else {
        return Vec::new();
    };
    let mut out = vec![("gap_trend.py".to_string(), gap_trend_script(aggregate))];
    match m.kind {
        Kind::Scaling => {
            let slopes: Vec<(f64, f64)> = m
                .verdicts
                .iter()
                .filter(|v| v.check.starts_with("Lemma A1: gap scaling exponent"))
                .filter_map(|v| {
                    let theta = v.check.rsplit("θ=").next()?.parse().ok()?;
                    Some((theta, v.value?))
                })
                .collect();
            out.push(("scaling.py".into(), scaling_script(aggregate, &slopes)));
        }
        Kind::Fluctuation | Kind::Clt => {
            let label = if m.kind == Kind::Clt { "clt" } else { "fluctuation" };
            let cells: Vec<String> = m
                .cells
                .iter()
                .filter(|c| c.label == label)
                .filter_map(|c| c.csv.clone())
                .collect();
            out.push((
                "fhat_histogram.py".into(),
                histogram_script(aggregate, label, &cells),
            ));
        }
        _ => {}
    }
    out
}

/// Writes the plotting scripts next to the run, under `plots/`. Fails
/// without writing anything when the manifest lists no CSVs or one of
/// them is missing.
pub fn emit_plots(manifest_path: &Path) -> CliResult<Vec<PathBuf>> {
    let manifest = RunManifest::load(manifest_path)?;
    let dir = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let csvs = manifest.csv_paths(&dir);
    if csvs.is_empty() {
        return Err(CliError::Runtime(format!(
            "{} lists no result CSVs; nothing to plot",
            manifest_path.display()
        )));
    }
    let missing: Vec<String> = csvs
        .iter()
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Runtime(format!(
            "missing CSV files: {}",
            missing.join(", ")
        )));
    }
    let plots = dir.join(PLOTS_DIR);
    std::fs::create_dir_all(&plots).map_err(|e| CliError::io(&plots, e))?;
    scripts(&manifest)
        .into_iter()
        .map(|(name, body)| {
            let path = plots.join(name);
            std::fs::write(&path, body).map_err(|e| CliError::io(&path, e))?;
            Ok(path)
        })
        .collect()
}
