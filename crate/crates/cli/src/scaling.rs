use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use vps_core::scaling_law::{fit_params, simulate_grid, FixedFields, LawParams, LossPoint, ScalingParams, SimSpec};

use crate::{read_input, runtime, usage, write_output, CliResult};

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Irreducible entropy E.
    #[arg(long = "E", default_value_t = 2.0)]
    irreducible: f64,
    /// Capacity coefficient A.
    #[arg(long = "A", default_value_t = 1.0)]
    coeff: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Model size N.
    #[arg(long = "N", default_value_t = 1000.0)]
    params: f64,
    /// Residual correlation between streams, in [0, 1].
    #[arg(long, default_value_t = 0.0)]
    rho: f64,
    /// Stream counts to evaluate.
    #[arg(long = "J", value_delimiter = ',', default_value = "1,2,4,8")]
    streams: Vec<usize>,
    /// Per-stream bias terms; a single value applies to every stream.
    #[arg(long, value_delimiter = ',')]
    bias: Vec<f64>,
    #[arg(long, default_value_t = 64)]
    vocab: usize,
    #[arg(long, default_value_t = 1_000_000)]
    samples: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV output (`J,predicted,empirical,stderr`); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Full per-cell report as JSON.
    #[arg(long)]
    detail: Option<PathBuf>,
}

pub fn cmd_simulate(a: SimulateArgs) -> CliResult {
    if a.streams.is_empty() {
        return Err(usage("--J needs at least one stream count"));
    }
    let max_j = a.streams.iter().copied().max().unwrap_or(1);
    let biases = match a.bias[..] {
        [b] => vec![b; max_j],
        _ => a.bias.clone(),
    };
    let spec = SimSpec {
        vocab_size: a.vocab,
        samples: a.samples,
        seed: a.seed,
        params: ScalingParams {
            irreducible_entropy: a.irreducible,
            capacity_coeff: a.coeff,
            capacity_exponent: a.alpha,
            params: a.params,
            correlation: a.rho,
            biases,
        },
    };
    let reports = simulate_grid(&spec, &[a.rho], &a.streams).map_err(|e| runtime(e.to_string()))?;
    let mut csv = String::from("J,predicted,empirical,stderr\n");
    for r in &reports {
        let _ = writeln!(csv, "{},{},{},{}", r.streams, r.predicted, r.empirical.mean, r.empirical.stderr);
    }
    if let Some(path) = &a.detail {
        let json = serde_json::to_string_pretty(&reports).map_err(|e| runtime(e.to_string()))?;
        write_output(path, &(json + "\n"))?;
    }
    match &a.out {
        Some(path) => write_output(path, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// CSV with columns `J` and `loss` (or `empirical`), and optionally `N`.
    #[arg(long)]
    input: PathBuf,
    /// Parameters held at their given values: E, A, alpha, rho, bias.
    #[arg(long, value_delimiter = ',')]
    fix: Vec<String>,
    #[arg(long = "E")]
    irreducible: Option<f64>,
    #[arg(long = "A")]
    coeff: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    /// Mean bias across streams.
    #[arg(long)]
    bias: Option<f64>,
    /// Model size for rows without an `N` column.
    #[arg(long = "N")]
    params: Option<f64>,
    /// Parameter table output; stdout always gets a copy.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Residuals CSV (`N,J,measured,predicted,residual`).
    #[arg(long)]
    residuals: Option<PathBuf>,
}

fn read_points(a: &FitArgs) -> CliResult<Vec<LossPoint>> {
    let text = read_input(&a.input)?;
    let name = a.input.display().to_string();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| usage(format!("{name}: {e}")))?.clone();
    let col = |names: &[&str]| headers.iter().position(|h| names.contains(&h));
    let j_col = col(&["J", "streams"]).ok_or_else(|| usage(format!("{name}: no `J` column")))?;
    let loss_col = col(&["loss", "empirical"]).ok_or_else(|| usage(format!("{name}: no `loss` column")))?;
    let n_col = col(&["N", "params"]);
    if n_col.is_none() && a.params.is_none() {
        return Err(usage(format!("{name}: no `N` column, so --N is required")));
    }
    let mut points = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| usage(format!("{name}: {e}")))?;
        let line = i + 2;
        let field = |c: usize| -> CliResult<f64> {
            let s = rec.get(c).unwrap_or("");
            s.parse()
                .map_err(|_| usage(format!("{name}:{line}: `{s}` is not a number")))
        };
        let streams = rec
            .get(j_col)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| usage(format!("{name}:{line}: bad stream count")))?;
        points.push(LossPoint {
            params: match n_col {
                Some(c) => field(c)?,
                None => a.params.expect("checked above"),
            },
            streams,
            loss: field(loss_col)?,
        });
    }
    Ok(points)
}

fn fixed_fields(a: &FitArgs) -> CliResult<FixedFields> {
    let mut fixed = FixedFields::default();
    for name in &a.fix {
        let (slot, given) = match name.trim() {
            "E" => (&mut fixed.irreducible_entropy, a.irreducible.is_some()),
            "A" => (&mut fixed.capacity_coeff, a.coeff.is_some()),
            "alpha" => (&mut fixed.capacity_exponent, a.alpha.is_some()),
            "rho" => (&mut fixed.correlation, a.rho.is_some()),
            // zero bias is the natural default
            "bias" => (&mut fixed.mean_bias, true),
            other => return Err(usage(format!("cannot fix unknown parameter `{other}` (E, A, alpha, rho, bias)"))),
        };
        if !given {
            return Err(usage(format!("--fix {name} needs a value: pass --{name}")));
        }
        *slot = true;
    }
    Ok(fixed)
}

pub fn cmd_fit(a: FitArgs) -> CliResult {
    let points = read_points(&a)?;
    let fixed = fixed_fields(&a)?;
    let template = LawParams {
        irreducible_entropy: a.irreducible.unwrap_or(0.0),
        capacity_coeff: a.coeff.unwrap_or(1.0),
        capacity_exponent: a.alpha.unwrap_or(1.0),
        correlation: a.rho.unwrap_or(0.0),
        mean_bias: a.bias.unwrap_or(0.0),
    };
    let fit = fit_params(&points, &template, &fixed).map_err(|e| runtime(e.to_string()))?;
    let p = fit.params;
    let mut table = String::from("parameter,value\n");
    for (name, v) in [
        ("E", p.irreducible_entropy),
        ("A", p.capacity_coeff),
        ("alpha", p.capacity_exponent),
        ("rho", p.correlation),
        ("bias", p.mean_bias),
        ("rss", fit.rss),
        ("condition", fit.condition),
    ] {
        let _ = writeln!(table, "{name},{v}");
    }
    let _ = writeln!(table, "iterations,{}", fit.iterations);
    if let Some(path) = &a.out {
        write_output(path, &table)?;
    }
    if let Some(path) = &a.residuals {
        let mut csv = String::from("N,J,measured,predicted,residual\n");
        for (pt, r) in points.iter().zip(&fit.residuals) {
            let _ = writeln!(
                csv,
                "{},{},{},{},{}",
                pt.params,
                pt.streams,
                pt.loss,
                p.predict(pt.params, pt.streams),
                r
            );
        }
        write_output(path, &csv)?;
    }
    print!("{table}");
    Ok(())
}
