//! The five subcommands. Replications are computed in parallel and written
//! afterwards, in order, through one [`StageWriter`].

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use maxstab::cones::{classify_path, PathClassification, TraceRow};
use maxstab::decompose::{classify_atoms, extract_m3, split_atoms, Decomposition};
use maxstab::diagnostics::{diagnose, ClassificationTally, DiagnosticReport};
use maxstab::export::{report_curves, write_grid_csv, write_json, write_rows_csv, write_verdicts_csv};
use maxstab::grid::{Domain, Grid, Mesh};
use maxstab::rng::RngStream;
use maxstab::sim::{replicate, simulate_m3, simulate_with, M3Config, M3ShapeLaw, MaxStableField, SimConfig, StopRule};
use maxstab::{Axis, Label, SpectralPath};
use serde::{Deserialize, Serialize};

use crate::config::{Method, Mode, RunConfig};
use crate::error::{CliError, Result};
use crate::manifest::{digest_file, RunManifest, StageRecord, StageWriter, MANIFEST};

/// Substreams of the run's root stream, one per stage. Decompose reuses the
/// simulate stream so it splits the very fields `simulate` wrote.
const FIELDS: u64 = 1;
const PATHS: u64 = 2;
const DIAGNOSE: u64 = 3;

pub const RESOLVED_CONFIG: &str = "config.resolved.toml";

fn root(cfg: &RunConfig) -> RngStream {
    RngStream::new(cfg.seed(), cfg.stream_id)
}

fn window(cfg: &RunConfig) -> Result<Arc<Grid>> {
    Ok(Arc::new(cfg.mesh()?.window(cfg.grid.radius)?))
}

fn stop_rule(cfg: &RunConfig) -> StopRule {
    match cfg.simulation.mode.expect("resolved") {
        Mode::Threshold => StopRule::Threshold { sup_bound: None },
        Mode::FixedN => StopRule::FixedN { n_atoms: cfg.simulation.n_atoms },
    }
}

/// The `n_reps` fields of a run, in replication order.
pub fn simulate_fields(cfg: &RunConfig) -> Result<Vec<MaxStableField>> {
    let grid = window(cfg)?;
    let s = &cfg.simulation;
    let stream = root(cfg).substream(FIELDS);
    let fields = match s.method {
        Method::Dehaan => {
            let sampler = cfg.model.prepare(&grid)?;
            let sim = SimConfig { stop: stop_rule(cfg), log_cap: s.log_cap, max_atoms: s.max_atoms };
            replicate(s.n_reps, &stream, |_, st| simulate_with(&sampler, &st, &sim))?
        }
        Method::M3 => {
            let shape = cfg.model.shape(&grid).expect("checked on resolve");
            let law = M3ShapeLaw::Fixed { shape };
            let m3 = M3Config {
                padding: cfg.grid.padding,
                stop: stop_rule(cfg),
                log_cap: s.log_cap,
                max_atoms: s.max_atoms,
            };
            replicate(s.n_reps, &stream, |_, st| simulate_m3(&law, &grid, &st, &m3))?
        }
    };
    Ok(fields)
}

fn field_flags(w: &mut StageWriter, fields: &[MaxStableField]) {
    w.flags.exact = Some(fields.iter().all(|f| f.truncation().exact));
    w.flags.atoms_dropped = fields.iter().any(|f| f.truncation().log_overflow());
    if w.flags.exact == Some(false) {
        w.flags.notes.push("fields truncated to a fixed atom count; values are approximate".into());
    }
}

fn start(cfg: &RunConfig, out: &Path, stage: &str) -> Result<StageWriter> {
    let mut w = StageWriter::new(out, stage, Some(cfg))?;
    w.write(RESOLVED_CONFIG, cfg.to_toml().as_bytes())?;
    Ok(w)
}

fn rep_name(prefix: &str, r: usize, ext: &str) -> String {
    format!("{prefix}/rep_{r:04}.{ext}")
}

/// One row per replication, one column per grid point.
fn fields_table(grid: &Grid, rows: &[&[f64]]) -> Result<Vec<u8>> {
    let mut out = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["rep".to_string()];
    for p in 0..grid.len() {
        let c = grid.coord(p);
        header.push(if grid.dim() == 1 { format!("x={}", c[0]) } else { format!("x=({};{})", c[0], c[1]) });
    }
    let csv_err = |e: csv::Error| CliError::Data(format!("csv: {e}"));
    out.write_record(&header).map_err(csv_err)?;
    for (r, v) in rows.iter().enumerate() {
        let mut rec = vec![r.to_string()];
        rec.extend(v.iter().map(|x| x.to_string()));
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.into_inner().map_err(|e| CliError::Data(format!("csv: {e}")))
}

pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<StageRecord> {
    let mut w = start(cfg, out, "simulate")?;
    let fields = simulate_fields(cfg)?;
    let grid = fields[0].grid().clone();
    let rows: Vec<&[f64]> = fields.iter().map(|f| f.values()).collect();
    w.write("fields.csv", &fields_table(&grid, &rows)?)?;
    for (r, f) in fields.iter().enumerate() {
        w.write_with(&rep_name("fields", r, "csv"), |b| maxstab::export::write_field_csv(f, b))?;
        w.write_with(&rep_name("fields", r, "json"), |b| write_json(f, b))?;
    }
    field_flags(&mut w, &fields);
    w.finish()
}

#[derive(Serialize)]
struct VerdictDoc<'a> {
    source: &'a str,
    tally: ClassificationTally,
    paths: Vec<PathVerdict<'a>>,
}

#[derive(Serialize)]
struct PathVerdict<'a> {
    path: usize,
    labels: Option<maxstab::cones::AtomLabels>,
    classification: Option<&'a PathClassification>,
}

/// Spectral paths drawn from the model on the classification window, or read
/// from CSV files (`x[,x2],value`).
pub fn cmd_classify(cfg: Option<&RunConfig>, inputs: &[PathBuf], out: &Path) -> Result<StageRecord> {
    let mut w = match cfg {
        Some(c) => start(c, out, "classify")?,
        None => StageWriter::new(out, "classify", None)?,
    };
    let (paths, source) = if inputs.is_empty() {
        let cfg = cfg.ok_or_else(|| CliError::Usage("classify needs --config or --input".into()))?;
        let grid = Arc::new(cfg.mesh()?.window(cfg.classify.window_radius.expect("resolved"))?);
        let sampler = cfg.model.prepare(&grid)?;
        let stream = root(cfg).substream(PATHS);
        let paths = replicate(cfg.simulation.n_reps, &stream, |_, s| sampler.path_of(&sampler.draw(&s)))?;
        (paths, "model")
    } else {
        let mut paths = Vec::new();
        for p in inputs {
            let bytes = fs::read(p).map_err(|_| CliError::Missing(p.clone()))?;
            w.inputs.push(crate::manifest::FileEntry {
                path: p.display().to_string(),
                sha256: crate::manifest::sha256_hex(&bytes),
                bytes: bytes.len() as u64,
            });
            paths.push(read_path_csv(&bytes, cfg.map(|c| c.mesh()).transpose()?, p)?);
        }
        (paths, "files")
    };
    let (radii, thresholds, hw) = match cfg {
        Some(c) => (c.classify.radii.clone().expect("resolved"), c.classify.thresholds, c.classify.sup_local_halfwidth),
        None => {
            let r = paths.iter().map(|p| p.window_radius()).fold(f64::INFINITY, f64::min);
            (maxstab::cones::default_radii(r), Default::default(), None)
        }
    };
    let results: Vec<Option<PathClassification>> = paths
        .iter()
        .map(|p| if p.is_zero() { Ok(None) } else { classify_path(p, &radii, &thresholds, hw).map(Some) })
        .collect::<maxstab::Result<_>>()?;
    let labels: Vec<Option<maxstab::cones::AtomLabels>> =
        results.iter().map(|r| r.as_ref().map(|c| c.labels())).collect();
    let tally = ClassificationTally::from_labels(labels.iter());
    let doc = VerdictDoc {
        source,
        tally,
        paths: results
            .iter()
            .enumerate()
            .map(|(i, c)| PathVerdict { path: i, labels: labels[i], classification: c.as_ref() })
            .collect(),
    };
    w.write_with("verdicts.json", |b| write_json(&doc, b))?;
    let classified: Vec<PathClassification> = results.iter().flatten().cloned().collect();
    w.write_with("verdicts.csv", |b| write_verdicts_csv(&classified, b))?;
    let traces: Vec<TraceCsvRow> = results
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.as_ref().map(|c| (i, c)))
        .flat_map(|(i, c)| c.integral.trace.iter().map(move |t| TraceCsvRow::new(i, t)))
        .collect();
    w.write_with("traces.csv", |b| write_rows_csv(&traces, b))?;
    if tally.zero_paths > 0 {
        w.flags.notes.push(format!("{} paths vanish on the window and were not classified", tally.zero_paths));
    }
    w.finish()
}

#[derive(Serialize)]
struct TraceCsvRow {
    path: usize,
    radius: f64,
    volume: f64,
    integral: f64,
    average: f64,
    annulus_sup: f64,
}

impl TraceCsvRow {
    fn new(path: usize, t: &TraceRow) -> Self {
        Self {
            path,
            radius: t.radius,
            volume: t.volume,
            integral: t.integral,
            average: t.average,
            annulus_sup: t.annulus_sup,
        }
    }
}

fn read_path_csv(bytes: &[u8], mesh: Option<Mesh>, name: &Path) -> Result<SpectralPath> {
    let bad = |m: String| CliError::Data(format!("{}: {m}", name.display()));
    let mut rdr = csv::Reader::from_reader(bytes);
    let header = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let dim = match header.iter().collect::<Vec<_>>().as_slice() {
        ["x", "value"] => 1,
        ["x1", "x2", "value"] => 2,
        h => return Err(bad(format!("expected header x,value or x1,x2,value, got {}", h.join(",")))),
    };
    let mut coords = Vec::new();
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let nums: Vec<f64> = rec
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|_| bad(format!("not a number: {s:?}"))))
            .collect::<Result<_>>()?;
        coords.push([nums[0], if dim == 2 { nums[1] } else { 0.0 }]);
        values.push(nums[dim]);
    }
    if values.is_empty() {
        return Err(bad("no rows".into()));
    }
    let mesh = match mesh {
        Some(m) if m.dim == dim => m,
        Some(m) => return Err(bad(format!("file is {dim}-dimensional, config grid is {}-dimensional", m.dim))),
        None => infer_mesh(&coords, dim).ok_or_else(|| bad("cannot infer the mesh spacing".into()))?,
    };
    let idx = |x: f64| -> Result<i64> {
        let i = (x / mesh.spacing).round();
        if (i * mesh.spacing - x).abs() > 1e-9 * mesh.spacing.max(x.abs()) {
            return Err(bad(format!("coordinate {x} is off the mesh of spacing {}", mesh.spacing)));
        }
        Ok(i as i64)
    };
    let indices: Vec<[i64; 2]> =
        coords.iter().map(|c| Ok([idx(c[0])?, if dim == 2 { idx(c[1])? } else { 0 }])).collect::<Result<_>>()?;
    let grid = Arc::new(Grid::from_indices(dim, mesh.domain, mesh.spacing, indices.clone())?);
    if grid.len() != indices.len() {
        return Err(bad("duplicate points".into()));
    }
    let mut ordered = vec![0.0; grid.len()];
    for (i, v) in indices.iter().zip(values) {
        ordered[grid.position(*i).expect("point of the grid")] = v;
    }
    Ok(SpectralPath::from_values(grid, ordered)?)
}

/// Smallest positive gap between first coordinates; integer data with unit
/// gaps is taken as the lattice.
fn infer_mesh(coords: &[[f64; 2]], dim: usize) -> Option<Mesh> {
    let mut xs: Vec<f64> = coords.iter().map(|c| c[0]).collect();
    xs.sort_by(f64::total_cmp);
    let h = xs.windows(2).map(|w| w[1] - w[0]).filter(|d| *d > 0.0).fold(f64::INFINITY, f64::min);
    if !h.is_finite() {
        return None;
    }
    let domain = if h == 1.0 && xs.iter().all(|x| x.fract() == 0.0) { Domain::Lattice } else { Domain::Continuous };
    Mesh::new(dim, domain, h).ok()
}

#[derive(Serialize, Deserialize)]
struct DecomposeSummary {
    rep: usize,
    part1_atoms: usize,
    part2_atoms: usize,
    unassigned_atoms: usize,
    m3_atoms: Option<usize>,
    m3_excluded_boundary: Option<usize>,
}

pub fn cmd_decompose(cfg: &RunConfig, axis: Option<Axis>, out: &Path) -> Result<StageRecord> {
    let mut w = start(cfg, out, "decompose")?;
    let axis = axis.unwrap_or(cfg.decompose.axis);
    let fields = simulate_fields(cfg)?;
    let wide = Arc::new(cfg.mesh()?.window(cfg.classify.window_radius.expect("resolved"))?);
    let radii = cfg.classify.radii.clone().expect("resolved");
    let mut summary = Vec::new();
    let mut decomps: Vec<Decomposition> = Vec::with_capacity(fields.len());
    for f in &fields {
        let labels = classify_atoms(f, &wide, &radii, &cfg.classify.thresholds)?;
        decomps.push(split_atoms(f, axis, &labels, cfg.decompose.policy)?);
    }
    for (r, (d, f)) in decomps.iter().zip(&fields).enumerate() {
        let grid = f.grid();
        let names = match axis {
            Axis::Hopf => ["conservative", "dissipative"],
            Axis::Neveu => ["positive", "null"],
        };
        w.write_with(&rep_name("parts", r, "csv"), |b| {
            write_grid_csv(
                grid,
                &[
                    ("field", f.values()),
                    (names[0], d.part1.values()),
                    (names[1], d.part2.values()),
                    ("unassigned", d.unassigned.values()),
                ],
                b,
            )
        })?;
        for (part, field) in [("part1", &d.part1), ("part2", &d.part2), ("unassigned", &d.unassigned)] {
            w.write_with(&rep_name(part, r, "csv"), |b| maxstab::export::write_field_csv(field, b))?;
        }
        w.write_with(&rep_name("decomposition", r, "json"), |b| write_json(d, b))?;
        // The dissipative part is the mixed-moving-maximum part.
        let m3 = if axis == Axis::Hopf {
            let ex = extract_m3(&d.part2, cfg.decompose.boundary_margin)?;
            w.write_with(&rep_name("m3_atoms", r, "json"), |b| write_json(&ex, b))?;
            Some(ex)
        } else {
            None
        };
        summary.push(DecomposeSummary {
            rep: r,
            part1_atoms: d.part1_atoms.len(),
            part2_atoms: d.part2_atoms.len(),
            unassigned_atoms: d.unassigned_atoms.len(),
            m3_atoms: m3.as_ref().map(|e| e.atoms.len()),
            m3_excluded_boundary: m3.as_ref().map(|e| e.excluded_boundary),
        });
    }
    w.write_with("decompose_summary.csv", |b| write_rows_csv(&summary, b))?;
    field_flags(&mut w, &fields);
    let unassigned: usize = summary.iter().map(|s| s.unassigned_atoms).sum();
    if unassigned > 0 {
        w.flags.notes.push(format!("{unassigned} atoms had inconclusive labels and went to the unassigned bucket"));
    }
    w.finish()
}

const PLOT_SCRIPT: &str = r#"# Plot the diagnostic curves written next to this script.
# Usage: python plot_curves.py [run_dir]
import csv, sys, pathlib
import matplotlib.pyplot as plt

d = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else ".")
rows = lambda n: list(csv.DictReader(open(d / n)))
fig, ax = plt.subplots(1, 3, figsize=(14, 4))
m = rows("min_expectation.csv")
ax[0].errorbar([float(r["lag"]) for r in m], [float(r["mean"]) for r in m], [3 * float(r["se"]) for r in m], fmt="o")
ax[0].set_xscale("log"); ax[0].set_title("E[Y(x) ^ Y(0)]")
for fam in ("dyadic", "generic"):
    e = [r for r in rows("exceedance.csv") if r["family"] == fam and r["delta"] == "0.1"]
    ax[1].plot([float(r["lag"]) for r in e], [float(r["p"]) for r in e], "o-", label=fam)
ax[1].set_xscale("log"); ax[1].legend(); ax[1].set_title("P[Y(x) > 0.1]")
c = rows("cesaro.csv")
ax[2].loglog([float(r["radius"]) for r in c], [float(r["median"]) for r in c], "o-")
ax[2].set_title("median A_r")
fig.savefig(d / "curves.png", dpi=120)
"#;

pub fn cmd_diagnose(cfg: &RunConfig, out: &Path) -> Result<StageRecord> {
    let mut w = start(cfg, out, "diagnose")?;
    let report = diagnose(&cfg.model, &cfg.mesh()?, &cfg.diagnostics, &root(cfg).substream(DIAGNOSE))?;
    w.write_with("report.json", |b| write_json(&report, b))?;
    for (stem, bytes) in report_curves(&report)? {
        w.write(&format!("{stem}.csv"), &bytes)?;
    }
    w.write("plot_curves.py", PLOT_SCRIPT.as_bytes())?;
    w.flags.exact = Some(report.provenance.exact_fields);
    if let Some(c) = &report.verdicts.conflict {
        w.flags.notes.push(c.clone());
    }
    w.finish()
}

/// Verify every digest in the run directory's manifest and summarize it.
pub fn cmd_report(dir: &Path) -> Result<(StageRecord, String)> {
    if !dir.is_dir() {
        return Err(CliError::Missing(dir.to_path_buf()));
    }
    let manifest =
        RunManifest::load(dir)?.ok_or_else(|| CliError::Data(format!("no {MANIFEST} in {}", dir.display())))?;
    if manifest.stages.iter().all(|s| s.stage == "report") {
        return Err(CliError::Data(format!("{} holds no results", dir.display())));
    }
    for stage in &manifest.stages {
        for f in &stage.files {
            let found = digest_file(dir, &f.path)?;
            if found.sha256 != f.sha256 {
                return Err(CliError::Digest { path: f.path.clone(), expected: f.sha256.clone(), found: found.sha256 });
            }
        }
    }
    let mut text = String::new();
    let _ = writeln!(text, "maxstab run report");
    let _ = writeln!(
        text,
        "toolkit {}  config {}",
        manifest.toolkit_version,
        manifest.config_hash.as_deref().unwrap_or("-")
    );
    if let Some(c) = &manifest.config {
        let _ = writeln!(text, "model {}  seed {}  stream {}", c.model.name(), c.seed(), c.stream_id);
    }
    let mut rows: Vec<SummaryRow> = Vec::new();
    // Wall-clock times stay in the manifest so the summary is reproducible.
    let _ = writeln!(text, "\n{:<10} {:>6} {:>6}  notes", "stage", "files", "exact");
    for s in manifest.stages.iter().filter(|s| s.stage != "report") {
        let exact = s.flags.exact.map_or("-".to_string(), |e| e.to_string());
        let _ = writeln!(text, "{:<10} {:>6} {:>6}  {}", s.stage, s.files.len(), exact, s.flags.notes.join("; "));
        if s.flags.atoms_dropped {
            let _ = writeln!(text, "{:<10} atom log overflowed; fields cannot be split", "");
        }
    }
    if dir.join("report.json").exists() {
        let r: DiagnosticReport = read_json(&dir.join("report.json"))?;
        let _ = writeln!(text, "\nverdicts");
        for (name, v) in [("ergodic", &r.verdicts.ergodic), ("mixing", &r.verdicts.mixing), ("m3", &r.verdicts.m3)] {
            let _ = writeln!(text, "  {name:<8} {:?}", v.outcome);
            rows.push(SummaryRow {
                stage: "diagnose".into(),
                key: format!("verdict.{name}"),
                value: format!("{:?}", v.outcome).to_lowercase(),
            });
        }
        if let Some(c) = &r.verdicts.conflict {
            let _ = writeln!(text, "  {c}");
        }
        let t = &r.classification;
        let _ = writeln!(
            text,
            "  paths: integral {}C/{}D/{}I, decay {}C/{}D/{}I, cesaro {}P/{}N/{}I, dual {}",
            t.integral.conservative,
            t.integral.dissipative,
            t.integral.inconclusive,
            t.decay.conservative,
            t.decay.dissipative,
            t.decay.inconclusive,
            t.cesaro.positive,
            t.cesaro.null,
            t.cesaro.inconclusive,
            t.dual_conflicts
        );
        for th in &r.theta {
            let _ = writeln!(text, "  theta(z={}) = {:.4} ± {:.4}", th.z, th.theta, th.se);
            rows.push(SummaryRow {
                stage: "diagnose".into(),
                key: format!("theta.z={}", th.z),
                value: th.theta.to_string(),
            });
        }
        for id in &r.identity {
            let _ = writeln!(
                text,
                "  identity lag {}: lhs {:.4} rhs {:.4} gap/se {:.2}",
                id.lag,
                id.lhs,
                id.rhs,
                id.gap / id.pooled_se
            );
        }
    }
    if dir.join("verdicts.json").exists() {
        let v: serde_json::Value = read_json(&dir.join("verdicts.json"))?;
        let t: ClassificationTally =
            serde_json::from_value(v["tally"].clone()).map_err(|e| CliError::Data(e.to_string()))?;
        let _ = writeln!(text, "\nclassify: {} paths ({} zero)", t.n_paths, t.zero_paths);
        for (name, c) in [("integral", t.integral), ("decay", t.decay), ("cesaro", t.cesaro)] {
            for l in [Label::Conservative, Label::Dissipative, Label::Positive, Label::Null, Label::Inconclusive] {
                let n = (c.fraction(l) * c.total() as f64).round() as usize;
                if n > 0 {
                    let _ = writeln!(text, "  {name:<8} {:<12} {n}", l.as_str());
                    rows.push(SummaryRow {
                        stage: "classify".into(),
                        key: format!("{name}.{}", l.as_str()),
                        value: n.to_string(),
                    });
                }
            }
        }
    }
    if dir.join("decompose_summary.csv").exists() {
        let mut rdr =
            csv::Reader::from_path(dir.join("decompose_summary.csv")).map_err(|e| CliError::Data(e.to_string()))?;
        let reps: Vec<DecomposeSummary> =
            rdr.deserialize().collect::<std::result::Result<_, _>>().map_err(|e| CliError::Data(e.to_string()))?;
        let sum = |f: fn(&DecomposeSummary) -> usize| reps.iter().map(f).sum::<usize>();
        let _ = writeln!(
            text,
            "\ndecompose: {} reps, atoms part1 {} part2 {} unassigned {}",
            reps.len(),
            sum(|r| r.part1_atoms),
            sum(|r| r.part2_atoms),
            sum(|r| r.unassigned_atoms)
        );
        rows.push(SummaryRow {
            stage: "decompose".into(),
            key: "unassigned_atoms".into(),
            value: sum(|r| r.unassigned_atoms).to_string(),
        });
    }
    let mut w = StageWriter::new(dir, "report", manifest.config.as_ref())?;
    w.write("summary.txt", text.as_bytes())?;
    w.write_with("summary.csv", |b| write_rows_csv(&rows, b))?;
    Ok((w.finish()?, text))
}

#[derive(Serialize)]
struct SummaryRow {
    stage: String,
    key: String,
    value: String,
}

fn read_json<T: serde::de::DeserializeOwned>(p: &Path) -> Result<T> {
    let text = fs::read_to_string(p).map_err(|_| CliError::Missing(p.to_path_buf()))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
}
