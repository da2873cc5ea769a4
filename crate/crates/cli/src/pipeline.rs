//! Load-or-compute steps shared by the subcommands. Every artifact lives in
//! the output directory; an existing artifact is reused unless `force` is set.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use conetomo::config::{DataSource, GeometrySpec, PhantomSpec, RoiSpec, RunConfig};
use conetomo::geometry::{ray_volume, truncated_ray_volume, tuy_check};
use conetomo::presets::Preset;
use conetomo::projector::{forward, truncate};
use conetomo::roi_iter::{critical_radius_sweep, roi_reconstruct, ReconReport, SweepTable};
use conetomo::{Acquisition, ProjectionSet, Result, VoxelVolume};

pub fn default_config() -> RunConfig {
    RunConfig {
        phantom: PhantomSpec::SheppLogan { original_contrast: false, radius_fraction: conetomo::config::CUBE_LAYOUT },
        n: 64,
        voxel_size: 1.0,
        supersample: 2,
        geometry: GeometrySpec::Preset(Preset::sphere()),
        roi: RoiSpec { center: conetomo::Vec3::ZERO, radius_fraction: 90.0 / 221.0 },
        radii: vec![45.0 / 221.0, 60.0 / 221.0, 75.0 / 221.0, 90.0 / 221.0],
        epsilon: 0.1,
        data: DataSource::default(),
        inverse: None,
        iter: Default::default(),
        output: PathBuf::from("out"),
        seed: 0,
    }
}

pub struct Pipeline {
    cfg: RunConfig,
    force: bool,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "nan".into())
}

impl Pipeline {
    pub fn new(cfg: RunConfig, force: bool) -> Pipeline {
        Pipeline { cfg, force }
    }

    pub fn dir(&self) -> PathBuf {
        self.cfg.output.clone()
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.cfg.output.join(name)
    }

    pub fn force(&self) -> bool {
        self.force
    }

    fn fresh(&self, outputs: &[&str]) -> bool {
        !self.force && outputs.iter().all(|o| self.path(o).exists())
    }

    fn density_name(&self) -> String {
        match &self.cfg.phantom {
            PhantomSpec::SheppLogan { .. } => "shepp_logan".into(),
            PhantomSpec::Ellipsoids { path, .. } => path.display().to_string(),
            PhantomSpec::Blob { .. } => "blob".into(),
            PhantomSpec::Volume { path } => path.display().to_string(),
        }
    }

    fn geometry_name(acq: &Acquisition) -> &'static str {
        match acq {
            Acquisition::Cone(g) => g.kind().name(),
            Acquisition::Parallel(_) => "parallel",
        }
    }

    pub fn phantom(&self) -> Result<VoxelVolume> {
        let path = self.path("phantom.raw");
        if self.fresh(&["phantom.raw", "phantom.json"]) {
            return VoxelVolume::read_raw(&path);
        }
        let v = self.cfg.volume()?;
        v.write_raw(&path)?;
        Ok(v)
    }

    pub fn projections(&self) -> Result<ProjectionSet> {
        let path = self.path("projections.raw");
        let acq = self.cfg.acquisition()?;
        if self.fresh(&["projections.raw", "projections.json"]) {
            let p = ProjectionSet::read_raw(&path)?;
            if p.acquisition().digest() == acq.digest() {
                return Ok(p);
            }
        }
        let p = match (self.cfg.data, self.cfg.analytic_phantom()?) {
            (DataSource::Analytic, Some(ph)) => forward(&ph, &acq, None)?,
            _ => forward(&self.phantom()?, &acq, None)?,
        };
        p.write_raw(&path)?;
        Ok(p)
    }

    pub fn truncated(&self) -> Result<ProjectionSet> {
        let path = self.path("truncated.raw");
        let roi = self.cfg.roi_ball(self.cfg.roi.radius_fraction)?;
        if self.fresh(&["truncated.raw", "truncated.json"]) {
            let p = ProjectionSet::read_raw(&path)?;
            if p.roi() == Some(&roi) && p.acquisition().digest() == self.cfg.acquisition()?.digest() {
                return Ok(p);
            }
        }
        let g = truncate(&self.projections()?, &roi)?;
        g.write_raw(&path)?;
        Ok(g)
    }

    pub fn reconstruct(&self) -> Result<()> {
        if self.fresh(&["recon.raw", "recon.json", "report.json"]) {
            return Ok(());
        }
        let g = self.truncated()?;
        let truth = self.phantom()?;
        let z = self.cfg.inverse_operator(g.acquisition());
        let roi = self.cfg.roi_ball(self.cfg.roi.radius_fraction)?;
        let (f, report) = roi_reconstruct(&g, &z, &roi, &self.cfg.iter, Some(&truth))?;
        f.write_raw(&self.path("recon.raw"))?;
        write_json(&self.path("report.json"), &report)
    }

    pub fn sweep(&self) -> Result<()> {
        if self.fresh(&["sweep.json", "sweep.csv"]) {
            return Ok(());
        }
        let full = self.projections()?;
        let truth = self.phantom()?;
        let z = self.cfg.inverse_operator(full.acquisition());
        let b = self.cfg.ball();
        let radii: Vec<f64> = self.cfg.radii.iter().map(|f| f * b.radius).collect();
        let table = critical_radius_sweep(&full, &truth, &z, &radii, self.cfg.epsilon, &self.cfg.iter)?;
        write_json(&self.path("sweep.json"), &table)?;
        fs::write(self.path("sweep.csv"), self.sweep_csv(&table, Self::geometry_name(full.acquisition())))?;
        Ok(())
    }

    fn sweep_csv(&self, table: &SweepTable, geometry: &str) -> String {
        let rb = self.cfg.ball().radius;
        let mut s = String::from("density,geometry,roi_radius,roi_fraction,RL1,iterations,converged\n");
        for r in &table.rows {
            let _ = writeln!(
                s,
                "{},{},{:.4},{:.4},{},{},{}",
                self.density_name(),
                geometry,
                r.radius,
                r.radius / rb,
                fmt_opt(r.rl1),
                r.iterations,
                r.converged
            );
        }
        s
    }

    /// Writes `tuy.json`; returns whether the condition holds.
    pub fn tuy(&self) -> Result<bool> {
        let path = self.path("tuy.json");
        let acq = self.cfg.acquisition()?;
        let Some(geom) = acq.cone() else {
            return Err(conetomo::Error::Config("Tuy's condition concerns cone-beam source sets".into()));
        };
        let report = if self.fresh(&["tuy.json"]) {
            serde_json::from_str(&fs::read_to_string(&path)?)?
        } else {
            let op = self.cfg.inverse_operator(&acq).grangeat;
            let r = tuy_check(geom, geom.ball(), op.tuy_points, op.tuy_directions, op.tuy_tolerance);
            write_json(&path, &r)?;
            r
        };
        Ok(report.pass)
    }

    pub fn metrics(&self) -> Result<()> {
        if self.fresh(&["metrics.csv", "metrics.txt"]) {
            return Ok(());
        }
        let acq = self.cfg.acquisition()?;
        let geometry = Self::geometry_name(&acq);
        let rb = self.cfg.ball().radius;
        let mut rows: Vec<(f64, Option<f64>, usize, bool)> = Vec::new();
        if let Ok(text) = fs::read_to_string(self.path("sweep.json")) {
            let table: SweepTable = serde_json::from_str(&text)?;
            rows.extend(table.rows.iter().map(|r| (r.radius, r.rl1, r.iterations, r.converged)));
        }
        if let Ok(text) = fs::read_to_string(self.path("report.json")) {
            let rep: ReconReport = serde_json::from_str(&text)?;
            let r = self.cfg.roi.radius_fraction * rb;
            if !rows.iter().any(|row| (row.0 - r).abs() < 1e-9) {
                rows.push((r, rep.rl1, rep.iterations_run, rep.converged));
            }
        }
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut csv = String::from("density,geometry,roi_radius,RL1,iterations,converged\n");
        let mut txt = format!("{:<14} {:<14} {:>10} {:>9} {:>10} {:>9}\n", "density", "geometry", "roi_radius", "RL1", "iterations", "converged");
        for (r, rl1, it, conv) in &rows {
            let _ = writeln!(csv, "{},{},{:.4},{},{},{}", self.density_name(), geometry, r, fmt_opt(*rl1), it, conv);
            let pct = rl1.map(|e| format!("{:.2}%", 100.0 * e)).unwrap_or_else(|| "-".into());
            let _ = writeln!(txt, "{:<14} {:<14} {:>10.2} {:>9} {:>10} {:>9}", self.density_name(), geometry, r, pct, it, conv);
        }
        if self.path("truncated.raw").exists() {
            let g = ProjectionSet::read_raw(&self.path("truncated.raw"))?;
            // share of rays through B that the truncation discards
            let measured = 1.0 - g.masked_fraction();
            if let (Some(geom), Some(roi)) = (g.acquisition().cone(), g.roi()) {
                let b = *geom.ball();
                let predicted = truncated_ray_volume(geom, &b, roi)? / ray_volume(geom, &b)?;
                let _ = writeln!(txt, "\ndiscarded ray fraction: measured {measured:.4}, predicted {predicted:.4}");
                let _ = writeln!(csv, "# discarded_fraction,{measured:.6},{predicted:.6}");
            } else {
                let _ = writeln!(txt, "\ndiscarded ray fraction: measured {measured:.4}");
            }
        }
        fs::write(self.path("metrics.csv"), csv)?;
        fs::write(self.path("metrics.txt"), txt)?;
        Ok(())
    }
}
