use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde_json::{json, Value};

use ptsw::cubic::{find_ep3, phase_diagram, trace_ep2_line, EffectiveModel, Grid};
use ptsw::ed::{compare_effective_vs_ed, detect_all_ep2, max_re_deviation_by_g, track_levels, LevelBranch, SweepParam};
use ptsw::model::SystemParams;
use ptsw::params::ParamFile;

use crate::args::{Command, Common, Format, ModelArg, SweepAxis};

const DEFAULT_THETA_FRAC: f64 = 40.0;
const DEFAULT_OMEGA_R_RATIO: f64 = 1.07;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Domain(ptsw::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Domain(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "UsageError: {m}"),
            CliError::Domain(e) => write!(f, "{e}"),
        }
    }
}

/// Problems with the parameter file are the user's input, not the physics.
impl From<ptsw::Error> for CliError {
    fn from(e: ptsw::Error) -> Self {
        match e {
            ptsw::Error::Config(_) => CliError::Usage(e.to_string()),
            e => CliError::Domain(e),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// What `main` prints once the artifact is written.
pub struct Outcome {
    pub summary: String,
    /// The artifact went to standard output, so the summary must not.
    pub artifact_on_stdout: bool,
}

pub fn run(command: Command) -> Result<Outcome> {
    let common = match &command {
        Command::Spectrum { common }
        | Command::Sweep { common, .. }
        | Command::PhaseDiagram { common, .. }
        | Command::Ep3 { common, .. }
        | Command::Compare { common, .. } => common,
    };
    if let Some(n) = common.jobs {
        if n == 0 {
            return Err(CliError::Usage("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let params = resolve_params(common)?;
    let omega = params.omega();
    let (artifact, summary) = match &command {
        Command::Spectrum { .. } => spectrum(&params, common.format)?,
        Command::Sweep {
            sweep,
            from,
            to,
            steps,
            ep2_output,
            ..
        } => {
            if *steps < 2 || !(from < to) {
                return Err(CliError::Usage("sweep needs --from < --to and --steps >= 2".into()));
            }
            let (artifact, ep2_csv, summary) = sweep_run(&params, *sweep, (*from, *to), *steps, common.format)?;
            if let Some(path) = ep2_output {
                if common.format == Format::Json {
                    return Err(CliError::Usage("--ep2-output applies to CSV output only".into()));
                }
                write_file(path, &ep2_csv)?;
            }
            (artifact, summary)
        }
        Command::PhaseDiagram {
            g_range,
            gamma_range,
            model,
            ..
        } => {
            let grid = Grid::new(
                (g_range.0 * omega, g_range.1 * omega),
                (gamma_range.0 * omega, gamma_range.1 * omega),
                common.grid.0,
                common.grid.1,
            )?;
            phase(&params, &grid, effective_model(*model), common.format)?
        }
        Command::Ep3 { model, .. } => ep3(&params, effective_model(*model), common.format)?,
        Command::Compare { g_max, steps, .. } => {
            if *steps < 2 || !(*g_max > 0.0) {
                return Err(CliError::Usage("compare needs --g-max > 0 and --steps >= 2".into()));
            }
            compare(&params, *g_max, *steps, common.format)?
        }
    };
    let artifact_on_stdout = match &common.output {
        Some(path) => {
            write_file(path, &artifact)?;
            false
        }
        None => {
            std::io::stdout()
                .write_all(artifact.as_bytes())
                .map_err(|e| CliError::Usage(format!("stdout: {e}")))?;
            true
        }
    };
    Ok(Outcome {
        summary,
        artifact_on_stdout,
    })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn effective_model(m: ModelArg) -> EffectiveModel {
    match m {
        ModelArg::Approx => EffectiveModel::Approx,
        ModelArg::Full => EffectiveModel::Full,
    }
}

/// File entries first, flags on top. Ratio flags are scaled by the qubit
/// frequency Ω, which the flags fix to 1 when θ is given.
fn resolve_params(c: &Common) -> Result<SystemParams> {
    let mut f = match &c.config {
        Some(path) => ParamFile::read(path)?,
        None => ParamFile::default(),
    };
    let theta = c.theta_frac.map(|n| PI / n).or(c.theta_rad);
    if c.delta.is_some() || theta.is_some() {
        (f.delta, f.epsilon, f.omega, f.theta) = (None, None, None, None);
    }
    if let (Some(d), Some(e)) = (c.delta, c.epsilon) {
        (f.delta, f.epsilon) = (Some(d), Some(e));
    }
    if let Some(t) = theta {
        (f.omega, f.theta) = (Some(1.0), Some(t));
    }
    if f.delta.is_none() && f.epsilon.is_none() && f.omega.is_none() && f.theta.is_none() {
        (f.omega, f.theta) = (Some(1.0), Some(PI / DEFAULT_THETA_FRAC));
    }
    let omega = match (f.delta, f.epsilon, f.omega) {
        (Some(d), Some(e), _) => d.hypot(e),
        (_, _, Some(w)) => w,
        _ => 1.0,
    };
    if let Some(r) = c.gamma_over_omega {
        f.gamma = Some(r * omega);
    }
    if let Some(r) = c.g_over_omega {
        f.g = Some(r * omega);
    }
    if let Some(r) = c.omega_r_ratio {
        f.omega_r = Some(r * omega);
    }
    if f.omega_r.is_none() {
        f.omega_r = Some(DEFAULT_OMEGA_R_RATIO * omega);
    }
    if let Some(n) = c.nmax {
        f.n_max = Some(n);
    }
    Ok(f.resolve()?)
}

/// Parameter echo as `# key = value` lines; with the `# ` stripped they form
/// a TOML file accepted by `--config`.
fn csv_header(command: &str, params: &SystemParams) -> String {
    let mut s = format!("# ptsw {command}\n");
    for (k, v) in [
        ("delta", params.delta),
        ("epsilon", params.epsilon),
        ("gamma", params.gamma),
        ("omega_r", params.omega_r),
        ("g", params.g),
    ] {
        let _ = writeln!(s, "# {k} = {v:?}");
    }
    let _ = writeln!(s, "# n_max = {}", params.n_max);
    s
}

fn json_doc(command: &str, params: &SystemParams, body: Value) -> Result<String> {
    let mut doc = json!({ "command": command, "params": params });
    if let (Value::Object(d), Value::Object(b)) = (&mut doc, body) {
        d.extend(b);
    }
    let mut s = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Usage(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn csv_table(header: &str, columns: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Usage(e.to_string());
    w.write_record(columns).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    let body = w.into_inner().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(format!("{header}{}", String::from_utf8_lossy(&body)))
}

fn num(x: f64) -> String {
    format!("{x:?}")
}

fn parity(p: Option<i8>) -> String {
    p.map_or(String::new(), |p| p.to_string())
}

fn parity_json(p: Option<i8>) -> Value {
    p.map_or(Value::Null, Value::from)
}

const SPECTRUM_COLUMNS: [&str; 5] = ["sweep_value", "level_index", "re_e", "im_e", "parity_index"];

/// Rows of the spectrum table: sweep value in units of Ω, energies in units
/// of Ω, branches in their order at the first point.
fn spectrum_rows(branches: &[LevelBranch], omega: f64) -> Vec<(f64, usize, f64, f64, Option<i8>)> {
    let steps = branches.first().map_or(0, |b| b.sweep_values.len());
    let mut rows = Vec::new();
    for k in 0..steps {
        for (idx, b) in branches.iter().enumerate() {
            let e = b.energies[k] / omega;
            rows.push((b.sweep_values[k] / omega, idx, e.re, e.im, b.parity_index));
        }
    }
    rows
}

fn spectrum_artifact(
    command: &str,
    params: &SystemParams,
    branches: &[LevelBranch],
    format: Format,
    extra: Value,
) -> Result<String> {
    let rows = spectrum_rows(branches, params.omega());
    match format {
        Format::Csv => csv_table(
            &csv_header(command, params),
            &SPECTRUM_COLUMNS,
            rows.iter()
                .map(|r| vec![num(r.0), r.1.to_string(), num(r.2), num(r.3), parity(r.4)]),
        ),
        Format::Json => {
            let levels: Vec<Value> = rows
                .iter()
                .map(|r| {
                    json!({ "sweep_value": r.0, "level_index": r.1, "re_e": r.2, "im_e": r.3, "parity_index": parity_json(r.4) })
                })
                .collect();
            let mut body = json!({ "levels": levels });
            if let (Value::Object(b), Value::Object(x)) = (&mut body, extra) {
                b.extend(x);
            }
            json_doc(command, params, body)
        }
    }
}

fn spectrum(params: &SystemParams, format: Format) -> Result<(String, String)> {
    let branches = track_levels(params, SweepParam::G, &[params.g])?;
    let artifact = spectrum_artifact("spectrum", params, &branches, format, json!({}))?;
    let omega = params.omega();
    let ground = branches.iter().map(|b| b.energies[0].re).fold(f64::INFINITY, f64::min) / omega;
    let complex = branches.iter().filter(|b| !b.is_real(0, omega)).count();
    Ok((
        artifact,
        format!(
            "{} levels, lowest Re E/Omega = {ground:.10}, {complex} complex",
            branches.len()
        ),
    ))
}

fn sweep_run(
    params: &SystemParams,
    axis: SweepAxis,
    range: (f64, f64),
    steps: usize,
    format: Format,
) -> Result<(String, String, String)> {
    let omega = params.omega();
    let sweep = match axis {
        SweepAxis::G => SweepParam::G,
        SweepAxis::Gamma => SweepParam::Gamma,
    };
    let values: Vec<f64> = (0..steps)
        .map(|k| omega * (range.0 + (range.1 - range.0) * k as f64 / (steps - 1) as f64))
        .collect();
    let branches = track_levels(params, sweep, &values)?;
    let eps = detect_all_ep2(params, sweep, &branches)?;
    let ep2_rows: Vec<Vec<String>> = eps
        .iter()
        .map(|e| {
            vec![
                num(e.sweep_lo / omega),
                num(e.sweep_hi / omega),
                parity(e.parity_a),
                parity(e.parity_b),
            ]
        })
        .collect();
    let ep2_json: Vec<Value> = eps
        .iter()
        .map(|e| {
            json!({
                "sweep_value_lo": e.sweep_lo / omega,
                "sweep_value_hi": e.sweep_hi / omega,
                "parity_a": parity_json(e.parity_a),
                "parity_b": parity_json(e.parity_b),
            })
        })
        .collect();
    let axis_name = match axis {
        SweepAxis::G => "g",
        SweepAxis::Gamma => "gamma",
    };
    let extra = json!({ "sweep": axis_name, "ep2": ep2_json });
    let artifact = spectrum_artifact("sweep", params, &branches, format, extra)?;
    let ep2_csv = csv_table(
        &csv_header("sweep", params),
        &["sweep_value_lo", "sweep_value_hi", "parity_a", "parity_b"],
        ep2_rows,
    )?;
    let opposite = eps.iter().filter(|e| e.opposite_parity()).count();
    Ok((
        artifact,
        ep2_csv,
        format!(
            "{} levels over {steps} {axis_name} values; {} EP2s, {opposite} between opposite parities",
            branches.len(),
            eps.len()
        ),
    ))
}

fn phase(params: &SystemParams, grid: &Grid, model: EffectiveModel, format: Format) -> Result<(String, String)> {
    let omega = params.omega();
    let diagram = phase_diagram(params, grid, model)?;
    let mut counts = std::collections::BTreeMap::new();
    for n in &diagram.nodes {
        *counts.entry(n.class.as_str()).or_insert(0usize) += 1;
    }
    let artifact = match format {
        Format::Csv => csv_table(
            &csv_header("phase-diagram", params),
            &[
                "g_over_omega",
                "gamma_over_omega",
                "max_im_e",
                "min_level_dist",
                "class",
            ],
            diagram.nodes.iter().map(|n| {
                vec![
                    num(n.g / omega),
                    num(n.gamma / omega),
                    num(n.max_im_e / omega),
                    num(n.min_level_dist / omega),
                    n.class.as_str().to_string(),
                ]
            }),
        )?,
        Format::Json => {
            let nodes: Vec<Value> = diagram
                .nodes
                .iter()
                .map(|n| {
                    json!({
                        "g_over_omega": n.g / omega,
                        "gamma_over_omega": n.gamma / omega,
                        "max_im_e": n.max_im_e / omega,
                        "min_level_dist": n.min_level_dist / omega,
                        "class": n.class.as_str(),
                    })
                })
                .collect();
            let ep2_line: Vec<Vec<[f64; 2]>> = match trace_ep2_line(params, grid, model) {
                Ok(lines) => lines
                    .iter()
                    .map(|l| l.iter().map(|&(g, y)| [g / omega, y / omega]).collect())
                    .collect(),
                Err(ptsw::Error::EmptyContour) => Vec::new(),
                Err(e) => return Err(e.into()),
            };
            json_doc(
                "phase-diagram",
                params,
                json!({ "grid": [grid.n_g, grid.n_gamma], "nodes": nodes, "ep2_line": ep2_line }),
            )?
        }
    };
    let tally: Vec<String> = counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
    Ok((
        artifact,
        format!("{}x{} nodes: {}", grid.n_g, grid.n_gamma, tally.join(", ")),
    ))
}

fn ep3(params: &SystemParams, model: EffectiveModel, format: Format) -> Result<(String, String)> {
    let omega = params.omega();
    let r = find_ep3(params, None, model)?;
    let (g, gamma, e) = (r.g_cr / omega, r.gamma_cr / omega, r.triple_energy / omega);
    let artifact = match format {
        Format::Json => json_doc(
            "ep3",
            params,
            json!({
                "g_cr": g,
                "gamma_cr": gamma,
                "triple_energy_re": e.re,
                "triple_energy_im": e.im,
                "rank_ok": r.rank_ok,
                "residual": r.residual,
            }),
        )?,
        Format::Csv => csv_table(
            &csv_header("ep3", params),
            &[
                "g_cr",
                "gamma_cr",
                "triple_energy_re",
                "triple_energy_im",
                "rank_ok",
                "residual",
            ],
            [vec![
                num(g),
                num(gamma),
                num(e.re),
                num(e.im),
                r.rank_ok.to_string(),
                num(r.residual),
            ]],
        )?,
    };
    Ok((
        artifact,
        format!(
            "EP3 at g_cr/Omega = {g:.6}, gamma_cr/Omega = {gamma:.6e}, E/Omega = {:.10}",
            e.re
        ),
    ))
}

fn compare(params: &SystemParams, g_max: f64, steps: usize, format: Format) -> Result<(String, String)> {
    let omega = params.omega();
    let gs: Vec<f64> = (0..steps)
        .map(|k| omega * g_max * k as f64 / (steps - 1) as f64)
        .collect();
    let rows = compare_effective_vs_ed(params, &gs, params.gamma)?;
    let columns = [
        "g_over_omega",
        "level",
        "ed_re",
        "ed_im",
        "full_re",
        "full_im",
        "approx_re",
        "approx_im",
        "dev_full_re",
        "dev_approx_re",
    ];
    let fields = |r: &ptsw::ed::ComparisonRow| {
        [
            r.g / omega,
            r.ed.re / omega,
            r.ed.im / omega,
            r.full.re / omega,
            r.full.im / omega,
            r.approx.re / omega,
            r.approx.im / omega,
            r.dev_full_re() / omega,
            r.dev_approx_re() / omega,
        ]
    };
    let artifact = match format {
        Format::Csv => csv_table(
            &csv_header("compare", params),
            &columns,
            rows.iter().map(|r| {
                let f = fields(r);
                let mut v = vec![num(f[0]), r.level.to_string()];
                v.extend(f[1..].iter().map(|&x| num(x)));
                v
            }),
        )?,
        Format::Json => {
            let list: Vec<Value> = rows
                .iter()
                .map(|r| {
                    let f = fields(r);
                    let mut m = serde_json::Map::new();
                    m.insert("g_over_omega".into(), json!(f[0]));
                    m.insert("level".into(), json!(r.level));
                    for (name, x) in columns[2..].iter().zip(&f[1..]) {
                        m.insert((*name).into(), json!(x));
                    }
                    Value::Object(m)
                })
                .collect();
            json_doc("compare", params, json!({ "rows": list }))?
        }
    };
    let by_g = max_re_deviation_by_g(&rows);
    let worst = by_g.iter().map(|x| x.1).fold(0.0, f64::max) / omega;
    let first = by_g.iter().find(|x| x.1 >= 1e-2 * omega).map(|x| x.0 / omega);
    Ok((
        artifact,
        format!(
            "max |Re| deviation {worst:.3e} Omega; first >= 1e-2 Omega at {}",
            first.map_or(format!("none up to g/Omega = {g_max}"), |g| format!("g/Omega = {g:.4}"))
        ),
    ))
}
