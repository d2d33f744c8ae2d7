use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _};
use log::{info, warn};
use sgdl::action::{quasi_potential, LagrangianCtx};
use sgdl::config::ExperimentConfig;
use sgdl::landscape::{cost_matrix, dominance_report, energy_levels, gaussian_energy_closed_form};
use sgdl::objective::CriticalOptions;
use sgdl::records::{
    compare, read_json, write_json, ComponentsFile, LandscapeFile, OccupationFile, OccupationRun, SlopeEntry, SlopesFile,
};
use sgdl::simulate::{ldp_slope, simulate, LdpBudget, SimulationOptions};
use sgdl::{CriticalComponentF64, Error, ObjectiveSpecF64};

pub const EXIT_EMPTY_CRITICAL: u8 = 2;
pub const EXIT_ASSUMPTION4: u8 = 3;
pub const EXIT_DIVERGENCE: u8 = 4;
pub const EXIT_MISSING_INPUT: u8 = 5;

/// Share of diverged chains above which `simulate` fails.
const MAX_DIVERGED: f64 = 0.01;

/// Relative energy tolerance for membership in the ground state.
const GROUND_REL_TOL: f64 = 0.07;

pub struct Context {
    cfg: ExperimentConfig,
    out: PathBuf,
    dump: bool,
}

impl Context {
    pub fn load(config: &Path, out: Option<&Path>, dump: bool) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
        let cfg = ExperimentConfig::from_json(&text)?;
        let out = out.map(Path::to_path_buf).or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Self { cfg, out, dump })
    }

    fn spec(&self) -> anyhow::Result<ObjectiveSpecF64> {
        Ok(self.cfg.objective.build()?)
    }

    fn components(&self, spec: &ObjectiveSpecF64) -> anyhow::Result<Vec<CriticalComponentF64>> {
        Ok(CriticalOptions::default().run(spec)?)
    }

    fn write<V: serde::Serialize>(&self, name: &str, v: &V) -> anyhow::Result<()> {
        let p = self.out.join(name);
        write_json(&p, v).with_context(|| format!("writing {}", p.display()))?;
        info!("wrote {}", p.display());
        Ok(())
    }

    pub fn critical(&self) -> anyhow::Result<u8> {
        let spec = self.spec()?;
        let comps = match self.components(&spec) {
            Ok(c) => c,
            Err(e) if matches!(e.downcast_ref::<Error>(), Some(Error::EmptyInput(_))) => {
                eprintln!("error: {e}");
                return Ok(EXIT_EMPTY_CRITICAL);
            }
            Err(e) => return Err(e),
        };
        self.write("components.json", &ComponentsFile::new(self.cfg.objective.name(), &comps))?;
        Ok(if comps.is_empty() { EXIT_EMPTY_CRITICAL } else { 0 })
    }

    pub fn energies(&self) -> anyhow::Result<u8> {
        let spec = self.spec()?;
        let comps = self.components(&spec)?;
        if comps.is_empty() {
            return Ok(EXIT_EMPTY_CRITICAL);
        }
        let noise = self.cfg.noise.build(spec.dim())?;
        let ctx = LagrangianCtx::new(spec, noise)?;
        let cost = cost_matrix(&ctx, &comps, &self.cfg.analysis.qp_options())?;
        let levels = match energy_levels(&cost.matrix) {
            Ok(l) => l,
            Err(e @ Error::NoFiniteTree(_)) => {
                eprintln!("error: {e}; infinite transition costs for pairs {:?}", cost.matrix.infinite_pairs());
                return Ok(EXIT_ASSUMPTION4);
            }
            Err(e) => return Err(e.into()),
        };
        let dominance = match dominance_report(&comps, &levels) {
            Ok(d) => Some(d),
            Err(e) => {
                warn!("{e}");
                None
            }
        };
        let closed = match self.cfg.noise.constant_gaussian_variance() {
            Some(s2) => Some((s2, gaussian_energy_closed_form(&comps, s2)?)),
            None => None,
        };
        let file = LandscapeFile::new(
            self.cfg.objective.name(),
            &self.cfg.noise,
            &cost,
            &levels,
            dominance,
            closed.as_ref().map(|(s, l)| (*s, l)),
            &self.cfg.gamma_sweep(),
        )?;
        self.write("landscape.json", &file)?;
        if !file.assumption4 {
            eprintln!("error: infinite transition costs for pairs {:?}", file.infinite_pairs);
            return Ok(EXIT_ASSUMPTION4);
        }
        Ok(0)
    }

    pub fn simulate(&self) -> anyhow::Result<u8> {
        let spec = self.spec()?;
        let comps = self.components(&spec)?;
        if comps.is_empty() {
            return Ok(EXIT_EMPTY_CRITICAL);
        }
        let noise = self.cfg.noise.build(spec.dim())?;
        let mut opts = SimulationOptions::new(self.cfg.analysis.eps);
        if self.dump {
            opts.keep_trajectories = Some(self.cfg.sgd.record_stride);
        }
        let mut runs = Vec::new();
        let mut worst = 0.0f64;
        for (g_idx, gamma) in self.cfg.gamma_sweep().into_iter().enumerate() {
            let mut sgd = self.cfg.sgd.clone();
            sgd.gamma = gamma;
            let res = simulate(&spec, &noise, &sgd, &comps, &opts)?;
            worst = worst.max(res.diverged_fraction());
            if self.dump {
                self.dump_trajectories(g_idx, &res.trajectories)?;
            }
            runs.push(OccupationRun::new(&sgd, &opts, &res));
        }
        self.write(
            "occupation.json",
            &OccupationFile { format_version: sgdl::config::FORMAT_VERSION.into(), objective: self.cfg.objective.name().into(), runs },
        )?;
        if worst > MAX_DIVERGED {
            eprintln!("error: {:.1}% of chains diverged", 100.0 * worst);
            return Ok(EXIT_DIVERGENCE);
        }
        Ok(0)
    }

    fn dump_trajectories(&self, g_idx: usize, trajectories: &[Vec<sgdl::simulate::Iterate<f64>>]) -> anyhow::Result<()> {
        let dir = self.out.join("trajectories");
        std::fs::create_dir_all(&dir)?;
        for (c, tr) in trajectories.iter().enumerate() {
            let path = dir.join(format!("gamma{g_idx}_chain{c}.csv"));
            let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
            let d = tr.first().map_or(0, |it| it.x.len());
            let mut header = vec!["step".to_string()];
            header.extend((0..d).map(|k| format!("x_{k}")));
            w.write_record(&header)?;
            for it in tr {
                let mut row = vec![it.step.to_string()];
                row.extend(it.x.iter().map(|v| sgdl::records::format_sig17(*v)));
                w.write_record(&row)?;
            }
            w.flush()?;
        }
        Ok(())
    }

    pub fn compare(&self) -> anyhow::Result<u8> {
        let names = ["components.json", "landscape.json", "occupation.json"];
        let missing: Vec<&str> = names.iter().copied().filter(|n| !self.out.join(n).is_file()).collect();
        if !missing.is_empty() {
            eprintln!("error: missing inputs in {}: {}", self.out.display(), missing.join(", "));
            return Ok(EXIT_MISSING_INPUT);
        }
        let comps: ComponentsFile = read_json(&self.out.join(names[0]))?;
        let land: LandscapeFile = read_json(&self.out.join(names[1]))?;
        let occ: OccupationFile = read_json(&self.out.join(names[2]))?;
        self.write("report.json", &compare(&land, &occ, &comps, GROUND_REL_TOL)?)?;
        Ok(0)
    }

    pub fn ldp_slope(&self) -> anyhow::Result<u8> {
        let spec = self.spec()?;
        let comps = self.components(&spec)?;
        if comps.is_empty() {
            return Ok(EXIT_EMPTY_CRITICAL);
        }
        let a = &self.cfg.analysis;
        if a.ldp_pairs.is_empty() {
            bail!("analysis.ldp_pairs is empty");
        }
        let noise = self.cfg.noise.build(spec.dim())?;
        let budget = LdpBudget {
            n_steps: self.cfg.sgd.n_steps,
            n_chains: self.cfg.sgd.n_chains,
            init: self.cfg.sgd.init.clone(),
            master_seed: self.cfg.sgd.master_seed,
            eps: a.eps,
            eps_in_factor: 0.5,
            eps_out_factor: 1.5,
            min_transitions: 10,
        };
        let ctx = LagrangianCtx::new(spec.clone(), noise.clone())?;
        let qp = a.qp_options();
        let mut entries = Vec::new();
        for &(i, j) in &a.ldp_pairs {
            if i >= comps.len() || j >= comps.len() {
                bail!("ldp pair ({i}, {j}) out of range for {} components", comps.len());
            }
            let predicted = match quasi_potential(&ctx, &comps[i], &comps[j], &qp) {
                Ok(q) if q.value.is_finite() => Some(-q.value),
                Ok(_) => None,
                Err(e) => {
                    warn!("quasi-potential {i} -> {j}: {e}");
                    None
                }
            };
            let entry = match ldp_slope(&spec, &noise, &comps, &a.gammas, &budget, (i, j)) {
                Ok(fit) => SlopeEntry {
                    pair: (i, j),
                    slope: Some(fit.fit.slope),
                    stderr: fit.fit.slope_stderr,
                    intercept: Some(fit.fit.intercept),
                    predicted,
                    points: fit.points,
                    warnings: fit.warnings,
                },
                Err(e @ Error::InsufficientTransitions(_)) => {
                    warn!("{e}");
                    SlopeEntry { pair: (i, j), slope: None, stderr: None, intercept: None, predicted, points: vec![], warnings: vec![e.to_string()] }
                }
                Err(e) => return Err(e.into()),
            };
            entries.push(entry);
        }
        self.write(
            "slopes.json",
            &SlopesFile { format_version: sgdl::config::FORMAT_VERSION.into(), objective: self.cfg.objective.name().into(), entries },
        )?;
        Ok(0)
    }

    pub fn full_report(&self) -> anyhow::Result<u8> {
        for step in [Self::critical, Self::energies, Self::simulate, Self::compare] {
            let code = step(self)?;
            if code != 0 {
                return Ok(code);
            }
        }
        if !self.cfg.analysis.ldp_pairs.is_empty() {
            return self.ldp_slope();
        }
        Ok(0)
    }
}
