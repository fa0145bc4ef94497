use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};
use vecchia_core::efficiency::{are, AreReport};
use vecchia_core::gaussian::{corr_matrix, simulate_gauss, CdfOptions, CorrelationModel};
use vecchia_core::io::{read_data, read_ids, read_sites, write_data, write_sites};
use vecchia_core::likelihood::{
    cv_logscore, fit, maxmin_validation_sites, replicate_logliks, resample_ci, FitResult, LikelihoodSpec, Model,
    ResampleOptions,
};
use vecchia_core::maxstable::{
    empirical_extremal_coefficient, extremal_coefficient, extremal_coefficient_sites, lag_in_direction,
    pairwise_extremal_coefficients, simulate_logistic, simulate_maxstable, Binning, MaxStableModel, PairEstimate,
};
use vecchia_core::spatial::{make_grid, SiteSet};
use vecchia_core::{DataMatrix, Error as CoreError};

use crate::config::RunConfig;
use crate::error::CliError;

pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
}

#[derive(Serialize)]
struct Provenance<'a> {
    command: &'a str,
    seed: Option<u64>,
    generator: String,
    config: &'a RunConfig,
}

impl Context {
    fn provenance(&self, command: &str) -> Value {
        serde_json::to_value(Provenance {
            command,
            seed: self.cfg.seed,
            generator: format!("vecchia {}", env!("CARGO_PKG_VERSION")),
            config: &self.cfg,
        })
        .expect("config serialises")
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn sites(&self) -> Result<SiteSet, CliError> {
        let s = self.cfg.section(&self.cfg.sites, "sites")?;
        match (s.grid, &s.file) {
            (Some(side), None) if side > 0 => Ok(make_grid(side)),
            (None, Some(path)) => read_sites(path).map_err(|e| wrap_io(path, e)),
            _ => Err(CliError::Config("[sites] needs exactly one of `grid` (positive) or `file`".into())),
        }
    }
}

fn wrap_io(path: &Path, e: CoreError) -> CliError {
    match e {
        CoreError::Io(io) => CliError::io(path, io),
        other => CliError::Core(other),
    }
}

/// Every input file must exist and the output directory must be writable
/// before any computation starts.
pub fn check_paths(ctx: &Context, inputs: &[&Path]) -> Result<(), CliError> {
    for p in inputs {
        if !p.is_file() {
            return Err(CliError::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found")));
        }
    }
    std::fs::create_dir_all(&ctx.out).map_err(|e| CliError::io(&ctx.out, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value).expect("json");
    s.push('\n');
    write_text(path, &s)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn simulate_model(model: &Model, sites: &SiteSet, n: usize, seed: u64) -> Result<DataMatrix, CliError> {
    Ok(match model {
        Model::Gaussian(g) => simulate_gauss(&corr_matrix(g, sites)?, n, seed),
        Model::MaxStable(m) => simulate_maxstable(m, sites, n, seed)?,
    })
}

fn read_fit(path: &Path) -> Result<FitResult, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: not a fit result: {e}", path.display())))
}

pub fn simulate(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let seed = cfg.require_seed("simulate")?;
    let model = cfg.require_model()?;
    let n = cfg.section(&cfg.simulate, "simulate")?.n;
    let sites = ctx.sites()?;
    check_paths(ctx, &[])?;
    let data = simulate_model(&model, &sites, n, seed)?;
    let (data_path, sites_path) = (ctx.path("data.csv"), ctx.path("sites.csv"));
    write_data(&data_path, &sites, &data).map_err(|e| wrap_io(&data_path, e))?;
    write_sites(&sites_path, &sites).map_err(|e| wrap_io(&sites_path, e))?;
    log::info!("simulated {n} replicates at {} sites", sites.len());
    write_json(
        &ctx.path("simulate.json"),
        &json!({
            "provenance": ctx.provenance("simulate"),
            "outputs": ["data.csv", "sites.csv"],
            "replicates": n,
            "sites": sites.len(),
        }),
    )
}

pub fn fit_cmd(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let seed = cfg.require_seed("fit")?;
    let init = cfg.require_model()?;
    let fc = cfg.section(&cfg.fit, "fit")?;
    let sites = ctx.sites()?;
    check_paths(ctx, &[&fc.data])?;
    let data = read_data(&fc.data, &sites).map_err(|e| wrap_io(&fc.data, e))?;
    let mut options = fc.options;
    options.cdf.seed = seed;
    let result = fit(&init, &data, &sites, &fc.spec, &fc.fixed, &options)?;
    log::info!("fit {:?} -> {:?} in {} evaluations", init.params(), result.psi_hat, result.n_evals);
    let mut value = serde_json::to_value(&result).expect("json");
    if let Some(rc) = &fc.resample {
        let ro = ResampleOptions { kind: rc.kind, replicates: rc.replicates, seed, level: rc.level, fit: options };
        let r = resample_ci(&result.model, &data, &sites, &fc.spec, &fc.fixed, &ro)?;
        value["resample"] = serde_json::to_value(r).expect("json");
    }
    value["provenance"] = ctx.provenance("fit");
    write_json(&ctx.path("fit.json"), &value)
}

fn report_json(r: &AreReport, wall: f64) -> Value {
    json!({
        "scheme": r.scheme,
        "param_names": r.param_names,
        "psi0": r.psi0,
        "n": r.n,
        "term_count": r.term_count,
        "J": r.j,
        "K": r.k,
        "V": r.v,
        "V_full": r.v_full,
        "asd": r.asd,
        "marginal_are": r.marginal_are,
        "overall_are": r.overall_are,
        "wall_time_s": wall,
    })
}

fn gaussian_only(model: Model) -> Result<CorrelationModel, CliError> {
    match model {
        Model::Gaussian(g) => Ok(g),
        Model::MaxStable(_) => Err(CoreError::Unsupported(
            "asymptotic relative efficiency has no closed form for max-stable models; use simulation".into(),
        )
        .into()),
    }
}

pub fn are_cmd(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let model = gaussian_only(cfg.require_model()?)?;
    let ac = cfg.section(&cfg.are, "are")?;
    if ac.schemes.is_empty() {
        return Err(CliError::Config("[are] lists no schemes".into()));
    }
    let sweep = ac.sweep.as_ref().map(|s| Ok::<_, CliError>((s, s.values()?))).transpose()?;
    let sites = ctx.sites()?;
    check_paths(ctx, &[])?;
    let general: Model = model.into();
    let schemes = ac.schemes.iter().map(|s| s.scheme(&sites, &general)).collect::<Result<Vec<_>, _>>()?;

    let mut reports = Vec::new();
    for scheme in &schemes {
        let t = Instant::now();
        let r = are(scheme, &model, &sites, ac.n)?;
        log::info!("{}: ARE {:.2}%", r.scheme, r.overall_are);
        reports.push(report_json(&r, t.elapsed().as_secs_f64()));
    }
    let mut outputs = vec!["are.json"];

    if let Some((sw, values)) = sweep {
        let names = model.param_names();
        let p = names
            .iter()
            .position(|n| *n == sw.parameter)
            .ok_or_else(|| CliError::Config(format!("sweep parameter `{}` not in {names:?}", sw.parameter)))?;
        let mut csv = csv_field(&sw.parameter);
        csv.push_str(",asd[full]");
        for s in &schemes {
            write!(csv, ",{},{}", csv_field(&format!("asd[{}]", s.label())), csv_field(&format!("are[{}]", s.label())))
                .unwrap();
        }
        csv.push('\n');
        for v in values {
            let mut psi = model.params();
            psi[p] = v;
            let m = model.with_params(&psi)?;
            let mut row = v.to_string();
            let mut full_asd = None;
            let mut cells = String::new();
            for s in &schemes {
                let r = are(s, &m, &sites, ac.n)?;
                full_asd.get_or_insert(r.v_full[p][p].sqrt());
                write!(cells, ",{},{}", r.asd[p], r.overall_are).unwrap();
            }
            write!(row, ",{}{cells}", full_asd.unwrap()).unwrap();
            csv.push_str(&row);
            csv.push('\n');
        }
        write_text(&ctx.path("are_sweep.csv"), &csv)?;
        outputs.push("are_sweep.csv");
    }
    write_json(
        &ctx.path("are.json"),
        &json!({ "provenance": ctx.provenance("are"), "outputs": outputs, "reports": reports }),
    )
}

pub fn score_cmd(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let sc = cfg.section(&cfg.score, "score")?;
    let sites = ctx.sites()?;
    let mut inputs: Vec<&Path> = vec![&sc.data];
    inputs.extend(sc.fits.iter().map(PathBuf::as_path));
    if let Some(v) = &sc.validation {
        inputs.push(v);
    }
    check_paths(ctx, &inputs)?;

    let mut candidates: Vec<(String, Model)> = Vec::new();
    if let Some(m) = cfg.model {
        m.validate()?;
        candidates.push(("model".into(), m));
    }
    for f in &sc.fits {
        candidates.push((f.display().to_string(), read_fit(f)?.model));
    }
    if candidates.is_empty() {
        return Err(CliError::Config("nothing to score: give [model] or score.fits".into()));
    }
    let data = read_data(&sc.data, &sites).map_err(|e| wrap_io(&sc.data, e))?;
    let validation = match &sc.validation {
        Some(path) => read_ids(path)
            .map_err(|e| wrap_io(path, e))?
            .into_iter()
            .map(|id| sites.index_of(id).ok_or_else(|| CliError::Config(format!("validation id {id} is not a site"))))
            .collect::<Result<Vec<_>, _>>()?,
        None => maxmin_validation_sites(&sites, sc.validation_fraction, cfg.seed.unwrap_or(0))?,
    };
    let mut scores = Vec::new();
    for (label, m) in &candidates {
        let s = cv_logscore(m, &data, &sites, &validation, sc.neighbours)?;
        log::info!("{label}: {s}");
        scores.push(json!({ "label": label, "model": m, "score": s }));
    }
    let best = scores
        .iter()
        .min_by(|a, b| a["score"].as_f64().unwrap().total_cmp(&b["score"].as_f64().unwrap()))
        .map(|s| s["label"].clone());
    let ids: Vec<u64> = validation.iter().map(|&j| sites.ids()[j]).collect();
    write_json(
        &ctx.path("score.json"),
        &json!({
            "provenance": ctx.provenance("score"),
            "validation_ids": ids,
            "neighbours": sc.neighbours,
            "scores": scores,
            "best": best,
        }),
    )
}

/// Summaries of `pairs` in each distance class, with the model coefficient
/// averaged over the same pairs.
fn bin_rows(
    out: &mut String,
    direction: (&str, String, String),
    pairs: &[&PairEstimate],
    classes: &Binning,
    model: &MaxStableModel,
    sites: &SiteSet,
) -> Result<(), CliError> {
    let owned: Vec<PairEstimate> = pairs.iter().map(|p| (*p).clone()).collect();
    let summary = empirical_extremal_coefficient(&owned, classes)?;
    let mut model_sum = vec![0.0; classes.len()];
    for p in &owned {
        if let Some(k) = classes.assign(p) {
            model_sum[k] += extremal_coefficient_sites(model, sites, p.i, p.j);
        }
    }
    for (k, b) in summary.iter().enumerate() {
        let model_theta = (b.count > 0).then(|| model_sum[k] / b.count as f64);
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            direction.0,
            direction.1,
            direction.2,
            b.lower,
            b.upper,
            b.count,
            opt(b.mean_distance),
            opt(b.mean),
            opt(b.q1),
            opt(b.median),
            opt(b.q3),
            opt(model_theta)
        )
        .unwrap();
    }
    Ok(())
}

pub fn diag_cmd(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let dc = cfg.section(&cfg.diag, "diag")?;
    if dc.distance_bins == 0 || dc.curve_points < 2 {
        return Err(CliError::Config("diag needs distance_bins ≥ 1 and curve_points ≥ 2".into()));
    }
    if !(dc.direction_step_deg > 0.0 && dc.direction_step_deg <= 90.0) {
        return Err(CliError::Config("direction_step_deg must lie in (0, 90]".into()));
    }
    let sites = ctx.sites()?;
    check_paths(ctx, &[&dc.fit, &dc.data])?;
    let fitted = read_fit(&dc.fit)?;
    let model = match fitted.model {
        Model::MaxStable(m) => m,
        Model::Gaussian(_) => {
            return Err(CoreError::Unsupported("extremal-coefficient diagnostics need a max-stable fit".into()).into())
        }
    };
    let data = read_data(&dc.data, &sites).map_err(|e| wrap_io(&dc.data, e))?;
    let pairs = pairwise_extremal_coefficients(&data, &sites)?;
    let widest = pairs.iter().map(|p| p.distance).fold(0.0, f64::max);
    let max = match dc.max_distance {
        Some(m) if m > 0.0 => m,
        Some(m) => return Err(CliError::Config(format!("max_distance {m} must be positive"))),
        // nudge so the widest pair falls inside the last class
        None => widest * (1.0 + 1e-9),
    };
    let classes = Binning::distance_classes(max, dc.distance_bins);
    let directions = Binning::directions(dc.direction_step_deg);
    let Binning::Direction { centres_deg, half_width_deg } = &directions else { unreachable!() };

    let mut bins = String::from(
        "direction_deg,direction_lower,direction_upper,distance_lower,distance_upper,count,mean_distance,\
         theta_mean,theta_q1,theta_median,theta_q3,model_theta\n",
    );
    let all: Vec<&PairEstimate> = pairs.iter().collect();
    bin_rows(&mut bins, ("all", String::new(), String::new()), &all, &classes, &model, &sites)?;
    for (k, c) in centres_deg.iter().enumerate() {
        let members: Vec<&PairEstimate> = pairs.iter().filter(|p| directions.assign(p) == Some(k)).collect();
        let dir = (c.to_string(), (c - half_width_deg).to_string(), (c + half_width_deg).to_string());
        bin_rows(&mut bins, (&dir.0, dir.1.clone(), dir.2.clone()), &members, &classes, &model, &sites)?;
    }

    let mut curve = String::from("direction_deg,distance,theta\n");
    for c in centres_deg {
        for s in 0..dc.curve_points {
            let h = max * s as f64 / (dc.curve_points - 1) as f64;
            writeln!(curve, "{c},{h},{}", extremal_coefficient(&model, lag_in_direction(h, *c))).unwrap();
        }
    }
    write_text(&ctx.path("diag_bins.csv"), &bins)?;
    write_text(&ctx.path("diag_curve.csv"), &curve)?;
    write_json(
        &ctx.path("diag.json"),
        &json!({
            "provenance": ctx.provenance("diag"),
            "outputs": ["diag_bins.csv", "diag_curve.csv"],
            "model": Model::MaxStable(model),
            "pairs": pairs.len(),
        }),
    )
}

pub fn bench_cmd(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let seed = cfg.require_seed("bench")?;
    let model = cfg.require_model()?;
    let bc = cfg.section(&cfg.bench, "bench")?;
    if bc.sides.is_empty() || bc.d.is_empty() || bc.reps == 0 || bc.n == 0 {
        return Err(CliError::Config("[bench] needs sides, d, and positive reps and n".into()));
    }
    check_paths(ctx, &[])?;
    let cdf = CdfOptions { seed, ..CdfOptions::default() };
    let mut csv = String::from("D,d,terms,n,reps,mean_s,min_s\n");
    for &side in &bc.sides {
        let sites = make_grid(side);
        // Timing does not depend on the dependence structure of the data,
        // so max-stable benchmarks use cheap logistic draws.
        let data = match model {
            Model::Gaussian(_) => simulate_model(&model, &sites, bc.n, seed)?,
            Model::MaxStable(_) => simulate_logistic(0.5, sites.len(), bc.n, seed)?,
        };
        for &d in &bc.d {
            let spec = LikelihoodSpec::Vecchia { d, ordering: bc.ordering, seed, omega: -1.0 };
            let scheme = spec.scheme(&sites, &model)?;
            let mut times = Vec::with_capacity(bc.reps);
            for _ in 0..bc.reps {
                let t = Instant::now();
                replicate_logliks(&model, &data, &sites, &scheme, &cdf)?;
                times.push(t.elapsed().as_secs_f64());
            }
            let mean = times.iter().sum::<f64>() / times.len() as f64;
            let min = times.iter().copied().fold(f64::INFINITY, f64::min);
            log::info!("D={} d={d}: {mean:.4} s", sites.len());
            writeln!(csv, "{},{d},{},{},{},{mean},{min}", sites.len(), scheme.len(), bc.n, bc.reps).unwrap();
        }
    }
    write_text(&ctx.path("bench.csv"), &csv)?;
    write_json(&ctx.path("bench.json"), &json!({ "provenance": ctx.provenance("bench"), "outputs": ["bench.csv"] }))
}
