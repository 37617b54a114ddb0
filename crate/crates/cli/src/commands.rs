//! Subcommand implementations. Each stage writes into the shared
//! [`Artifacts`] and appends to a text report.

use anyhow::{Context, Result};
use nalgebra::DVector;
use sdemor::diagnostics::{
    average_monotonicity_check, classify, energy_estimate_check, monotonicity_grid_scan, monotonicity_sample_scan,
    ClassifyOptions, GapMetric, GapReport,
};
use sdemor::error_bounds::error_table;
use sdemor::gramians::compute_gramians;
use sdemor::linalg::spd_inverse;
use sdemor::lyapunov::spectral_abscissa;
use sdemor::simulate::{simulate, SimOptions};
use sdemor::{balancing, Balanced, Gramians, Noise, System};

use crate::artifacts::{num, Artifacts, Report};
use crate::config::ExperimentConfig;

/// Lazily computed pipeline state shared by the stages of one invocation.
pub struct Pipeline<'a> {
    pub cfg: &'a ExperimentConfig,
    sys: Option<System>,
    pair: Option<Gramians>,
    bal: Option<Balanced>,
}

fn stage<T>(name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    log::info!("stage {name}");
    f().with_context(|| format!("stage '{name}' failed"))
}

impl<'a> Pipeline<'a> {
    pub fn new(cfg: &'a ExperimentConfig) -> Self {
        Self { cfg, sys: None, pair: None, bal: None }
    }

    fn system(&mut self) -> Result<&System> {
        if self.sys.is_none() {
            self.sys = Some(stage("model", || self.cfg.system())?);
        }
        Ok(self.sys.as_ref().unwrap())
    }

    fn gramians(&mut self) -> Result<&Gramians> {
        if self.pair.is_none() {
            let (c1, c2) = self.cfg.shifts()?;
            let opts = self.cfg.gramian_options();
            let sys = self.system()?;
            let pair = stage("gramians", || Ok(compute_gramians(sys, c1, c2, &opts)?))?;
            self.pair = Some(pair);
        }
        Ok(self.pair.as_ref().unwrap())
    }

    fn balanced(&mut self) -> Result<&Balanced> {
        if self.bal.is_none() {
            self.gramians()?;
            let (sys, pair) = (self.sys.as_ref().unwrap(), self.pair.as_ref().unwrap());
            let bal = stage("balance", || Ok(balancing::balance(sys, &pair.p, &pair.q)?))?;
            self.bal = Some(bal);
        }
        Ok(self.bal.as_ref().unwrap())
    }

    fn noise(&mut self) -> Result<Noise> {
        let s = &self.cfg.simulation;
        let k = self.system()?.k.clone();
        Ok(Noise::for_horizon(&k, s.t_final, s.dt, s.paths, s.seed)?)
    }

    pub fn stability_check(&mut self, art: &mut Artifacts, rep: &mut Report) -> Result<()> {
        let (c1, _) = self.cfg.shifts()?;
        let sys = self.system()?;
        let (a0, a1) = stage("stability-check", || Ok((spectral_abscissa(sys, 0.0)?, spectral_abscissa(sys, c1)?)))?;
        rep.section("stability")
            .real("abscissa", a0)
            .real("c1", c1)
            .real("abscissa_shifted", a1)
            .kv("mean_square_stable", a0 < 0.0)
            .kv("shifted_stable", a1 < 0.0);
        art.write_csv(
            "stability.csv",
            &["c1", "abscissa"],
            [vec![num(0.0), num(a0)], vec![num(c1), num(a1)]],
        )
    }

    pub fn gramians_stage(&mut self, art: &mut Artifacts, rep: &mut Report) -> Result<()> {
        let pair = self.gramians()?.clone();
        art.write_matrix("P.csv", &pair.p)?;
        art.write_matrix("Q.csv", &pair.q)?;
        rep.section("gramians")
            .real("c1", pair.c1)
            .real("c2", pair.c2)
            .real("c", pair.weight_exponent())
            .kv("kind", format!("{:?}", pair.kind))
            .real("cert_p", pair.cert_p)
            .real("cert_q", pair.cert_q)
            .real("q_residual", pair.q_residual)
            .real("lmi_max_eig", pair.lmi_max_eig)
            .real("trace_p", pair.p.trace())
            .real("trace_q", pair.q.trace())
            .kv("q_iterations", pair.stats.q_iterations)
            .kv("barrier_outer", pair.stats.barrier_outer)
            .kv("barrier_newton", pair.stats.barrier_newton);
        Ok(())
    }

    pub fn gap_scan(&mut self, art: &mut Artifacts, rep: &mut Report) -> Result<()> {
        let g = self.cfg.gap_scan.clone();
        let f = self.cfg.nonlinearity()?;
        let (x, c2, source) = match self.cfg.q_override() {
            Some(q) => (q, self.cfg.shifts()?.1, "override"),
            None => {
                let pair = self.gramians()?;
                let x = if g.metric == "q" { pair.q.clone() } else { stage("gap-scan", || Ok(spd_inverse(&pair.p)?))? };
                (x, pair.c2, "computed")
            }
        };
        let report: GapReport<f64> = stage("gap-scan", || {
            let metric = GapMetric::new(&x, false)?;
            Ok(if x.nrows() == 2 {
                monotonicity_grid_scan(&f, &metric, c2, g.lo, g.hi, g.points)?
            } else {
                monotonicity_sample_scan(&f, &metric, c2, g.lo, g.hi, g.samples, self.cfg.simulation.seed)?
            })
        })?;
        match &report.coords {
            Some(coords) => art.write_csv(
                "gap_scan.csv",
                &["x1", "x2", "gap"],
                report.values.iter().enumerate().map(|(i, &v)| vec![num(coords[(0, i)]), num(coords[(1, i)]), num(v)]),
            )?,
            None => art.write_csv(
                "gap_scan.csv",
                &["sample", "gap"],
                report.values.iter().enumerate().map(|(i, &v)| vec![i.to_string(), num(v)]),
            )?,
        }
        rep.section("gap_scan")
            .kv("metric", &g.metric)
            .kv("metric_source", source)
            .real("c2", c2)
            .kv("evaluations", report.values.len())
            .kv("positive_count", report.positive_count)
            .real("positive_fraction", report.positive_fraction)
            .real("max_positive", report.max_positive)
            .real("min_value", report.min_value)
            .kv("outcome", format!("{:?}", report.outcome));
        Ok(())
    }

    pub fn check_gramians(&mut self, art: &mut Artifacts, rep: &mut Report) -> Result<()> {
        let controls = self.cfg.controls()?;
        let s = self.cfg.simulation.clone();
        let noise = self.noise()?.with_paths(s.check_paths.max(2));
        self.gramians()?;
        let (sys, pair) = (self.sys.as_ref().unwrap(), self.pair.as_ref().unwrap());
        let n = sys.n();
        let (cls, rows) = stage("check-gramians", || {
            let opts = SimOptions { store_states: true, state_stride: 10 };
            let mut ensembles = Vec::new();
            let mut rows = Vec::new();
            for u in &controls {
                let u = u.clone().adapted_to(sys);
                let ens = simulate(sys, &u, s.t_final, &noise, &DVector::zeros(n), &opts)?;
                let avg = average_monotonicity_check(sys, pair, &ens)?;
                let energy = energy_estimate_check(sys, pair, &ens, &u)?;
                rows.push((u.id().to_string(), avg, energy));
                ensembles.push(ens);
            }
            let opts = ClassifyOptions { seed: s.seed, ..ClassifyOptions::default() };
            Ok((classify(sys, pair, &ensembles, &opts)?, rows))
        })?;
        let mut csv = Vec::new();
        for (id, avg, _) in &rows {
            for (k, &t) in avg.times.iter().enumerate() {
                csv.push(vec![
                    id.clone(),
                    num(t),
                    num(avg.lhs_p[k]),
                    num(avg.rhs_p[k]),
                    num(avg.se_p[k]),
                    num(avg.lhs_q[k]),
                    num(avg.rhs_q[k]),
                    num(avg.se_q[k]),
                ]);
            }
        }
        art.write_csv(
            "average_check.csv",
            &["control_id", "time", "lhs_p", "rhs_p", "se_p", "lhs_q", "rhs_q", "se_q"],
            csv,
        )?;
        let r = rep.section("classification");
        r.kv("kind", format!("{:?}", cls.kind));
        for (name, sc) in [
            ("global_p", &cls.global_p),
            ("global_q", &cls.global_q),
            ("lipschitz_p", &cls.lipschitz_p),
            ("lipschitz_q", &cls.lipschitz_q),
        ] {
            r.real(&format!("{name}.positive_fraction"), sc.positive_fraction)
                .real(&format!("{name}.max_positive"), sc.max_positive)
                .kv(&format!("{name}.outcome"), format!("{:?}", sc.outcome));
        }
        for (id, avg, energy) in &rows {
            r.kv(&format!("average.{id}.ok"), avg.all_ok())
                .real(&format!("average.{id}.margin_p"), avg.margin_p)
                .real(&format!("average.{id}.margin_q"), avg.margin_q)
                .kv(&format!("energy.{id}.ok"), energy.all_ok())
                .kv(&format!("excluded.{id}"), avg.excluded);
        }
        if let Some(p) = self.pair.as_mut() {
            p.kind = cls.kind;
        }
        Ok(())
    }

    pub fn balance_stage(&mut self, art: &mut Artifacts, rep: &mut Report) -> Result<()> {
        let policy = self.cfg.tie_policy()?;
        let r_list = self.cfg.balancing.r.clone();
        let bal = self.balanced()?.clone();
        let sys = self.sys.as_ref().unwrap();
        let n = bal.n();
        art.write_csv(
            "sigma.csv",
            &["index", "sigma", "tail_bound"],
            (0..n).map(|i| vec![(i + 1).to_string(), num(bal.sigma[i]), num(bal.tail_sum(i + 1))]),
        )?;
        art.write_matrix("S.csv", &bal.s)?;
        art.write_matrix("S_inv.csv", &bal.s_inv)?;
        let r_sec = rep.section("balance");
        r_sec.real("sigma_1", bal.sigma[0]).real("sigma_n", bal.sigma[n - 1]);
        for w in &bal.warnings {
            r_sec.kv("warning", format!("{w:?}"));
        }
        for r in r_list {
            let red = stage("truncate", || Ok(balancing::truncate(sys, &bal, r, policy)?))?;
            let tag = format!("reduced_r{r}");
            art.write_matrix(&format!("{tag}_A.csv"), &red.a)?;
            art.write_matrix(&format!("{tag}_B.csv"), &red.b)?;
            art.write_matrix(&format!("{tag}_C.csv"), &red.c)?;
            for (i, m) in red.n_mats.iter().enumerate() {
                art.write_matrix(&format!("{tag}_N{}.csv", i + 1), m)?;
            }
            art.write_matrix(&format!("{tag}_V.csv"), &red.v)?;
            art.write_matrix(&format!("{tag}_W.csv"), &red.w)?;
            rep.kv(&format!("order.{r}"), red.r).real(&format!("tail_bound.{r}"), bal.tail_sum(red.r));
        }
        Ok(())
    }

    pub fn simulate_stage(&mut self, art: &mut Artifacts, rep: &mut Report) -> Result<()> {
        let policy = self.cfg.tie_policy()?;
        let controls = self.cfg.controls()?;
        let s = self.cfg.simulation.clone();
        let r_list = self.cfg.balancing.r.clone();
        let noise = self.noise()?;
        self.balanced()?;
        let (sys, bal) = (self.sys.as_ref().unwrap(), self.bal.as_ref().unwrap());
        let x0 = DVector::zeros(sys.n());
        let reduced = r_list
            .iter()
            .map(|&r| Ok(balancing::truncate(sys, bal, r, policy)?))
            .collect::<Result<Vec<_>>>()?;
        rep.section("simulate").kv("paths", s.paths).real("dt", s.dt).real("t_final", s.t_final).kv("seed", s.seed);
        for u in &controls {
            let u = u.clone().adapted_to(sys);
            let id = u.id();
            let ens = stage("simulate", || Ok(simulate(sys, &u, s.t_final, &noise, &x0, &SimOptions::default())?))?;
            let times = ens.times();
            let p = sys.p();
            let moments: Vec<_> = (0..p).map(|ch| ens.output_moments(ch)).collect();
            let mut header = vec!["time".to_string()];
            for ch in 0..p {
                header.push(format!("mean_y{ch}"));
                header.push(format!("std_y{ch}"));
            }
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            art.write_csv(
                &format!("moments_{id}.csv"),
                &header,
                times.iter().enumerate().map(|(k, &t)| {
                    let mut row = vec![num(t)];
                    for (m, sd) in &moments {
                        row.push(num(m[k]));
                        row.push(num(sd[k]));
                    }
                    row
                }),
            )?;
            rep.kv(&format!("excluded.{id}"), ens.excluded());

            let k = s.sample_paths.min(s.paths);
            if k == 0 {
                continue;
            }
            let sub = noise.with_paths(k);
            let full = stage("simulate", || Ok(simulate(sys, &u, s.t_final, &sub, &x0, &SimOptions::default())?))?;
            let mut red_out = Vec::new();
            for red in &reduced {
                let xr = DVector::zeros(red.r);
                red_out.push(stage("simulate", || Ok(simulate(red, &u, s.t_final, &sub, &xr, &SimOptions::default())?))?);
            }
            let mut header = vec!["time".to_string(), "path".to_string()];
            for ch in 0..p {
                header.push(format!("y{ch}_full"));
                for red in &reduced {
                    header.push(format!("y{ch}_r{}", red.r));
                }
            }
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            let mut rows = Vec::new();
            for path in 0..k {
                for (step, &t) in times.iter().enumerate() {
                    let mut row = vec![num(t), path.to_string()];
                    for ch in 0..p {
                        row.push(num(full.outputs[path][(ch, step)]));
                        for e in &red_out {
                            row.push(num(e.outputs[path][(ch, step)]));
                        }
                    }
                    rows.push(row);
                }
            }
            art.write_csv(&format!("paths_{id}.csv"), &header, rows)?;
        }
        Ok(())
    }

    pub fn error_table_stage(&mut self, art: &mut Artifacts, rep: &mut Report) -> Result<()> {
        let controls = self.cfg.controls()?;
        let r_list = self.cfg.balancing.r.clone();
        let gap_orders = self.cfg.simulation.gap_orders.clone();
        let noise = self.noise()?;
        self.balanced()?;
        let (sys, pair, bal) = (self.sys.as_ref().unwrap(), self.pair.as_ref().unwrap(), self.bal.as_ref().unwrap());
        let controls: Vec<_> = controls.into_iter().map(|u| u.adapted_to(sys)).collect();
        let table = stage("error-table", || Ok(error_table(sys, bal, &r_list, &controls, &noise, pair, &gap_orders)?))?;
        let name = format!("error_table_{}.csv", self.cfg.model.nonlinearity);
        art.write_csv(
            &name,
            &["r", "control_id", "rel_error", "mc_se", "classical_bound", "gap_bound", "ratio", "excluded_paths"],
            table.rows.iter().map(|row| {
                vec![
                    row.r.to_string(),
                    row.control_id.clone(),
                    num(row.rel_error),
                    num(row.mc_se),
                    num(row.classical_bound),
                    row.gap_bound.map(num).unwrap_or_default(),
                    num(row.ratio),
                    row.excluded_paths.to_string(),
                ]
            }),
        )?;
        rep.section("error_table")
            .kv("file", &name)
            .real("c", table.c)
            .real("c1", table.c1)
            .real("c2", table.c2)
            .kv("seed", table.seed)
            .real("dt", table.dt)
            .kv("paths", table.n_paths);
        let excluded: usize = table.rows.iter().map(|r| r.excluded_paths).sum();
        if excluded > 0 {
            log::warn!("{excluded} path exclusions across the error table (blow-up)");
        }
        Ok(())
    }
}

