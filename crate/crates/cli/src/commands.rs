//! One function per subcommand; each writes its outputs and returns the
//! named pass/fail results that make up the manifest rollup.

use nestocc::acceptance;
use nestocc::brw::{count_brw, DEFAULT_BUDGET};
use nestocc::cltlab::{gap_bound_eval, run_theorem21, run_theorem32, run_vanishing_terms, run_wlln, CltReport};
use nestocc::laws::compute_moments;
use nestocc::occupancy::{simulate_coupled, SchemeConfig, YDecomp};
use nestocc::renewal::checks::{
    band_constant, check_lemma42, check_lorden, check_prop41, check_subadditivity, check_v_band, expansion_fit,
    BoundReport, ExpansionFit,
};
use nestocc::renewal::grid::GridFunction;
use nestocc::renewal::Ladder;
use nestocc::rng::{par_replicates, stream_from_key};
use nestocc::stats;
use serde::Serialize;

use crate::config::{BrwConfig, GapConfig, OccupancyConfig, PlanConfig, RenewalCheck, RenewalConfig, VanishConfig};
use crate::error::CliError;
use crate::output::{f, Csv, Outputs};

pub type Results = Vec<(String, bool)>;

#[derive(Serialize)]
struct LevelSummary {
    j: usize,
    mean_k: f64,
    mean_rho: f64,
    center: f64,
    mean_y1: f64,
    mean_y2: f64,
    mean_y3: f64,
}

pub fn occupancy(cfg: &OccupancyConfig, out: &mut Outputs) -> Result<Results, CliError> {
    let ladder = Ladder::build(
        &nestocc::laws::StepLaw::derived(cfg.law.clone()),
        cfg.h,
        cfg.t_max,
        cfg.j_max,
    )?;
    let rows: Vec<Vec<YDecomp>> = par_replicates(cfg.seed, cfg.replicates, |_, key| {
        let sc = SchemeConfig {
            n: cfg.n,
            j_max: cfg.j_max,
            law: cfg.law.clone(),
            seed: key,
        };
        let p = simulate_coupled(&sc, cfg.n as f64)?;
        (1..=cfg.j_max).map(|j| YDecomp::from_coupled(&p, j, &ladder)).collect()
    })?;
    let mut csv = Csv::new(&["replicate", "j", "K", "rho", "Y1", "Y2", "Y3"]);
    let mut identity = true;
    let mut monotone = true;
    for (r, ys) in rows.iter().enumerate() {
        for y in ys {
            csv.row(&[
                r.to_string(),
                y.j.to_string(),
                y.k.to_string(),
                y.rho.to_string(),
                f(y.y1),
                f(y.y2),
                f(y.y3),
            ]);
            let total = y.k as f64 - y.center;
            identity &= (y.y1 + y.y2 + y.y3 - total).abs() <= 1e-9 * (1.0 + total.abs());
        }
        monotone &= ys.windows(2).all(|w| w[0].k <= w[1].k);
    }
    let col = |j: usize, g: &dyn Fn(&YDecomp) -> f64| stats::mean(&rows.iter().map(|ys| g(&ys[j])).collect::<Vec<_>>());
    let summary: Vec<LevelSummary> = (0..cfg.j_max)
        .map(|j| LevelSummary {
            j: j + 1,
            mean_k: col(j, &|y| y.k as f64),
            mean_rho: col(j, &|y| y.rho as f64),
            center: rows[0][j].center,
            mean_y1: col(j, &|y| y.y1),
            mean_y2: col(j, &|y| y.y2),
            mean_y3: col(j, &|y| y.y3),
        })
        .collect();
    out.csv("occupancy.csv", csv)?;
    out.json("occupancy.json", &summary)?;
    Ok(vec![
        ("telescoping identity".into(), identity),
        ("K nondecreasing in j".into(), monotone),
    ])
}

#[derive(Serialize)]
struct BrwLevel {
    j: usize,
    mean: f64,
    stderr: f64,
    expected: Option<f64>,
    z: Option<f64>,
}

pub fn brw(cfg: &BrwConfig, out: &mut Outputs) -> Result<Results, CliError> {
    let law = cfg.law.step_law();
    law.validate()?;
    let sampler = law.sampler();
    let budget = cfg.budget.unwrap_or(DEFAULT_BUDGET);
    let counts = par_replicates(cfg.seed, cfg.replicates, |_, key| {
        Ok(count_brw(&sampler, cfg.j, cfg.t, &mut stream_from_key(key), budget)?.counts)
    })?;
    let ladder = match cfg.h {
        Some(h) => Some(Ladder::build(&law, h, cfg.t, cfg.j)?),
        None => None,
    };
    let mut csv = Csv::new(&["replicate", "j", "count"]);
    for (r, c) in counts.iter().enumerate() {
        for (j, n) in c.iter().enumerate() {
            csv.row(&[r.to_string(), (j + 1).to_string(), n.to_string()]);
        }
    }
    let mut levels = Vec::new();
    let mut results = Vec::new();
    for j in 1..=cfg.j {
        let xs: Vec<f64> = counts.iter().map(|c| c[j - 1] as f64).collect();
        let mean = stats::mean(&xs);
        let stderr = (stats::variance(&xs) / xs.len() as f64).sqrt();
        let expected = ladder.as_ref().map(|l| l.eval(j, cfg.t)).transpose()?;
        let z = expected.map(|e| if stderr > 0.0 { (mean - e) / stderr } else { 0.0 });
        if let Some(z) = z {
            results.push((format!("mean count j={j} within 4 stderr of V_j"), z.abs() < 4.0));
        }
        levels.push(BrwLevel {
            j,
            mean,
            stderr,
            expected,
            z,
        });
    }
    out.csv("brw.csv", csv)?;
    out.json("brw.json", &levels)?;
    Ok(results)
}

/// One report per requested check, written as `check_<name>.json`.
#[derive(Serialize)]
struct CheckReport {
    check: &'static str,
    u_method: String,
    bounds: Vec<BoundReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    expansion: Option<ExpansionFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    skipped: Option<String>,
}

fn grid_csv(g: &GridFunction) -> Csv {
    let mut csv = Csv::new(&["t", "value"]);
    for (i, v) in g.values().iter().enumerate() {
        csv.row(&[f(g.node(i)), f(*v)]);
    }
    csv
}

pub fn renewal(cfg: &RenewalConfig, out: &mut Outputs) -> Result<Results, CliError> {
    let law = cfg.law.step_law();
    let ladder = Ladder::build(&law, cfg.h, cfg.t_max, cfg.j_max)?;
    let m = compute_moments(&law)?;
    let mut header = vec!["t".to_string(), "U".into(), "G".into(), "V".into()];
    header.extend((2..=cfg.j_max).map(|j| format!("V_{j}")));
    let mut csv = Csv::new(&header.iter().map(String::as_str).collect::<Vec<_>>());
    for i in 0..ladder.u.len() {
        let mut row = vec![f(ladder.u.node(i)), f(ladder.u.values()[i]), f(ladder.g.values()[i])];
        row.extend((1..=cfg.j_max).map(|j| f(ladder.vj(j).expect("built up to j_max").values()[i])));
        csv.row(&row);
    }
    out.csv("grids.csv", csv)?;
    if cfg.dump_grids {
        out.csv("grid_U.csv", grid_csv(&ladder.u))?;
        out.csv("grid_G.csv", grid_csv(&ladder.g))?;
        for j in 1..=cfg.j_max {
            let name = if j == 1 {
                "grid_V.csv".to_string()
            } else {
                format!("grid_V_{j}.csv")
            };
            out.csv(&name, grid_csv(ladder.vj(j).expect("built up to j_max")))?;
        }
    }
    let checks: &[RenewalCheck] = if cfg.checks.is_empty() {
        &RenewalCheck::ALL
    } else {
        &cfg.checks
    };
    let c = band_constant(&ladder.u, &m);
    let levels: Vec<usize> = (1..=cfg.j_max).collect();
    let mut results = Vec::new();
    for &check in checks {
        let mut report = CheckReport {
            check: check.name(),
            u_method: format!("{:?}", ladder.u_method),
            bounds: vec![],
            expansion: None,
            skipped: None,
        };
        match check {
            RenewalCheck::Lorden => report.bounds.push(check_lorden(&ladder.u, &m)),
            RenewalCheck::VBand => report.bounds = check_v_band(&ladder.u, &ladder.g, ladder.v(), &m),
            RenewalCheck::PowerBand => report.bounds = check_prop41(&ladder, &levels, &m, c)?,
            RenewalCheck::Subadditivity => report.bounds.push(check_subadditivity(&ladder)),
            RenewalCheck::Growth => match check_lemma42(&ladder, cfg.j_max, &m, c) {
                Ok(r) => report.bounds = r,
                Err(e) => report.skipped = Some(e.to_string()),
            },
            RenewalCheck::Expansion => match expansion_fit(&law, ladder.v(), &m) {
                Ok(fit) => report.expansion = Some(fit),
                Err(e) => report.skipped = Some(e.to_string()),
            },
        }
        results.extend(report.bounds.iter().map(|b| (b.name.clone(), b.holds)));
        out.json(&format!("check_{}.json", check.name()), &report)?;
    }
    Ok(results)
}

fn clt_outputs(report: &CltReport, out: &mut Outputs) -> Result<Results, CliError> {
    let mut csv = Csv::new(&["point", "t", "n", "u", "level", "replicate", "raw", "stat"]);
    for (pi, p) in report.points.iter().enumerate() {
        for (r, (raw, st)) in p.raw.iter().zip(&p.stats).enumerate() {
            for (i, &u) in report.u_list.iter().enumerate() {
                csv.row(&[
                    pi.to_string(),
                    f(p.t),
                    p.n.map_or(String::new(), |n| n.to_string()),
                    f(u),
                    p.levels[i].to_string(),
                    r.to_string(),
                    f(raw[i]),
                    f(st[i]),
                ]);
            }
        }
    }
    out.csv(&format!("{}.csv", report.kind), csv)?;
    out.json(&format!("{}.json", report.kind), report)?;
    Ok(report.checks.iter().map(|c| (c.name.clone(), c.passed)).collect())
}

pub fn clt21(cfg: &PlanConfig, out: &mut Outputs) -> Result<Results, CliError> {
    clt_outputs(&run_theorem21(&cfg.plan)?, out)
}

pub fn clt32(cfg: &PlanConfig, out: &mut Outputs) -> Result<Results, CliError> {
    clt_outputs(&run_theorem32(&cfg.plan)?, out)
}

pub fn wlln(cfg: &PlanConfig, out: &mut Outputs) -> Result<Results, CliError> {
    let r = run_wlln(&cfg.plan)?;
    let mut csv = Csv::new(&["n", "j", "replicate", "ratio"]);
    for row in &r.rows {
        for (i, x) in row.ratios.iter().enumerate() {
            csv.row(&[row.n.to_string(), row.j.to_string(), i.to_string(), f(*x)]);
        }
    }
    out.csv("wlln.csv", csv)?;
    out.json("wlln.json", &r)?;
    Ok(r.checks.iter().map(|c| (c.name.clone(), c.passed)).collect())
}

pub fn vanish(cfg: &VanishConfig, out: &mut Outputs) -> Result<Results, CliError> {
    let r = run_vanishing_terms(&cfg.plan, cfg.term)?;
    let mut csv = Csv::new(&["t", "n", "u", "level", "replicate", "square"]);
    for row in &r.rows {
        for (k, sq) in row.squares.iter().enumerate() {
            for (i, &u) in r.u_list.iter().enumerate() {
                csv.row(&[
                    f(row.t),
                    row.n.map_or(String::new(), |n| n.to_string()),
                    f(u),
                    row.levels[i].to_string(),
                    k.to_string(),
                    f(sq[i]),
                ]);
            }
        }
    }
    out.csv("vanish.csv", csv)?;
    out.json("vanish.json", &r)?;
    Ok(r.checks.iter().map(|c| (c.name.clone(), c.passed)).collect())
}

pub fn gap(cfg: &GapConfig, out: &mut Outputs) -> Result<Results, CliError> {
    let ladder = Ladder::build(&cfg.law.step_law(), cfg.h, cfg.t_max, cfg.j)?;
    let mut csv = Csv::new(&["n", "tail_term", "sieve_term", "tail_ratio", "sieve_ratio"]);
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for &n in &cfg.n_list {
        let g = gap_bound_eval(n, cfg.j, &ladder)?;
        csv.row(&[f(n), f(g.tail_term), f(g.sieve_term), f(g.tail_ratio), f(g.sieve_ratio)]);
        results.push((
            format!("ratios at n={n:e} <= {}", cfg.bound),
            g.tail_ratio <= cfg.bound && g.sieve_ratio <= cfg.bound,
        ));
        rows.push((n, g));
    }
    let sub = check_subadditivity(&ladder);
    results.push((sub.name.clone(), sub.holds));
    out.csv("gap.csv", csv)?;
    out.json("gap.json", &(rows, sub))?;
    Ok(results)
}

pub fn run_acceptance(only: &[u32], out: &mut Outputs) -> Result<Results, CliError> {
    let ids: Vec<u32> = if only.is_empty() {
        acceptance::IDS.to_vec()
    } else {
        only.to_vec()
    };
    let mut all = Vec::new();
    for id in ids {
        let r = acceptance::run(id);
        println!("{}", r.line());
        all.push(r);
    }
    out.json("acceptance.json", &all)?;
    Ok(all
        .iter()
        .map(|r| (format!("criterion {} {}", r.id, r.name), r.passed))
        .collect())
}
