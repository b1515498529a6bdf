//! Run parameters: plasma-size presets, the Cyclone physics case, and the
//! line-based `key=value` config format.
//!
//! Normalized units throughout: lengths in units of the minor radius `a`
//! (so the thermal gyroradius is `1/a_over_rho`), B0 = 1 on axis,
//! Zi = mi = e = 1, velocities in ion thermal speed, time in `a/v_th`,
//! potential in Ti/e.

use crate::error::{Error, Result};

/// Every numerical and physical parameter of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunParams {
    /// Radial intervals between inner and outer boundary.
    pub mpsi: usize,
    /// Poloidal nodes on the outermost ring.
    pub mthetamax: usize,
    /// Toroidal planes (also the maximum toroidal domain count).
    pub ntoroidal: usize,
    /// Particles per grid point (average over a plane).
    pub micell: usize,
    /// Radial domain count.
    pub nradial_domains: usize,
    /// Toroidal domain count; must divide `ntoroidal`. Each toroidal rank
    /// owns `ntoroidal / ranks_toroidal` consecutive planes.
    pub ranks_toroidal: usize,
    /// Particle-decomposition replicas per spatial domain.
    pub npartdom: usize,
    /// Device size a/rho_i.
    pub a_over_rho: f64,
    pub r_inner: f64,
    pub r_outer: f64,
    /// R0/a.
    pub aspect_ratio: f64,
    /// Safety-factor profile q(r) = q0 + q2 (r/a)^2.
    pub q0: f64,
    pub q2: f64,
    /// R0/Ln and R0/LT drive strengths.
    pub rln: f64,
    pub rlt: f64,
    /// Ti/Te.
    pub tau: f64,
    /// Time step, units a/v_th.
    pub dt: f64,
    pub nsteps: usize,
    pub diag_every: usize,
    pub bin_every: usize,
    /// Ghost rings per radial window side (3..=8).
    pub nghost: usize,
    pub seed: u64,
    /// Data-parallel workers per rank.
    pub workers: usize,
}

impl Default for RunParams {
    /// Cyclone-case defaults at plasma size A.
    fn default() -> Self {
        RunParams {
            mpsi: 90,
            mthetamax: 640,
            ntoroidal: 64,
            micell: 100,
            nradial_domains: 1,
            ranks_toroidal: 64,
            npartdom: 1,
            a_over_rho: 125.0,
            r_inner: 0.1,
            r_outer: 0.9,
            aspect_ratio: 2.78,
            q0: 0.854,
            q2: 2.184,
            rln: 2.2,
            rlt: 6.9,
            tau: 1.0,
            dt: 0.06,
            nsteps: 100,
            diag_every: 1,
            bin_every: 10,
            nghost: 4,
            seed: 0,
            workers: 1,
        }
    }
}

/// Order in which `serialize_config` emits keys; also the accepted key set.
const KEYS: &[&str] = &[
    "mpsi",
    "mthetamax",
    "ntoroidal",
    "micell",
    "nradial_domains",
    "ranks_toroidal",
    "npartdom",
    "a_over_rho",
    "r_inner",
    "r_outer",
    "aspect_ratio",
    "q0",
    "q2",
    "rln",
    "rlt",
    "tau",
    "dt",
    "nsteps",
    "diag_every",
    "bin_every",
    "nghost",
    "seed",
    "workers",
];

/// Returns the parameters for one of the plasma sizes A-D.
///
/// Grid sizes (mpsi, mthetamax) and a/rho_i follow the published ladder
/// A:(90,640,125) B:(180,1280,250) C:(360,2560,500) D:(720,5120,1000),
/// with 64 toroidal planes and micell = 100.
pub fn preset(size_label: &str) -> Result<RunParams> {
    let (mpsi, mthetamax, a_over_rho) = match size_label {
        "A" => (90, 640, 125.0),
        "B" => (180, 1280, 250.0),
        "C" => (360, 2560, 500.0),
        "D" => (720, 5120, 1000.0),
        other => return Err(Error::UnknownPreset(other.to_string())),
    };
    Ok(RunParams {
        mpsi,
        mthetamax,
        a_over_rho,
        ..RunParams::default()
    })
}

impl RunParams {
    /// Total logical ranks.
    pub fn nranks(&self) -> usize {
        self.ranks_toroidal * self.nradial_domains * self.npartdom
    }

    /// Thermal gyroradius rho_i in units of a.
    pub fn rho_star(&self) -> f64 {
        1.0 / self.a_over_rho
    }

    /// Major radius R0 in units of a.
    pub fn major_radius(&self) -> f64 {
        self.aspect_ratio
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Invariant(msg));
        if self.mpsi < 4 {
            return fail(format!("mpsi = {} < 4", self.mpsi));
        }
        if self.mthetamax < 8 {
            return fail(format!("mthetamax = {} < 8", self.mthetamax));
        }
        if self.ntoroidal < 1 || self.micell < 1 {
            return fail("ntoroidal and micell must be >= 1".into());
        }
        if !(self.r_inner > 0.0 && self.r_inner < self.r_outer && self.r_outer <= 1.0) {
            return fail(format!(
                "need 0 < r_inner < r_outer <= 1, got ({}, {})",
                self.r_inner, self.r_outer
            ));
        }
        if self.ranks_toroidal == 0 || self.ntoroidal % self.ranks_toroidal != 0 {
            return fail(format!(
                "ranks_toroidal = {} must divide ntoroidal = {}",
                self.ranks_toroidal, self.ntoroidal
            ));
        }
        if self.nradial_domains == 0 || self.npartdom == 0 || self.workers == 0 {
            return fail("nradial_domains, npartdom and workers must be >= 1".into());
        }
        if !(3..=8).contains(&self.nghost) {
            return fail(format!("nghost = {} outside 3..=8", self.nghost));
        }
        // Every radial domain must own at least nghost rings past its ghosts
        // so that ghost merging stays strictly nearest-neighbor.
        let rings = self.mpsi + 1;
        if self.nradial_domains * self.nghost > rings {
            return Err(Error::TooManyDomains(
                self.nradial_domains,
                self.nghost,
                rings,
            ));
        }
        for (key, v) in [
            ("a_over_rho", self.a_over_rho),
            ("aspect_ratio", self.aspect_ratio),
            ("tau", self.tau),
            ("dt", self.dt),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return fail(format!("{key} must be finite and > 0, got {v}"));
            }
        }
        for (key, v) in [("q0", self.q0), ("q2", self.q2), ("rln", self.rln), ("rlt", self.rlt)] {
            if !v.is_finite() {
                return fail(format!("{key} must be finite, got {v}"));
            }
        }
        if self.q0 <= 0.0 {
            return fail(format!("q0 must be > 0, got {}", self.q0));
        }
        Ok(())
    }

    fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        fn int(key: &str, v: &str) -> Result<usize> {
            v.parse::<i64>()
                .ok()
                .filter(|n| *n >= 0)
                .map(|n| n as usize)
                .ok_or_else(|| Error::InvalidValue {
                    key: key.to_string(),
                    reason: format!("'{v}' is not a non-negative integer"),
                })
        }
        fn real(key: &str, v: &str) -> Result<f64> {
            v.parse::<f64>().map_err(|_| Error::InvalidValue {
                key: key.to_string(),
                reason: format!("'{v}' is not a number"),
            })
        }
        match key {
            "mpsi" => self.mpsi = int(key, value)?,
            "mthetamax" => self.mthetamax = int(key, value)?,
            "ntoroidal" => {
                self.ntoroidal = int(key, value)?;
                self.ranks_toroidal = self.ntoroidal;
            }
            "micell" => self.micell = int(key, value)?,
            "nradial_domains" => self.nradial_domains = int(key, value)?,
            "ranks_toroidal" => self.ranks_toroidal = int(key, value)?,
            "npartdom" => self.npartdom = int(key, value)?,
            "a_over_rho" => self.a_over_rho = real(key, value)?,
            "r_inner" => self.r_inner = real(key, value)?,
            "r_outer" => self.r_outer = real(key, value)?,
            "aspect_ratio" => self.aspect_ratio = real(key, value)?,
            "q0" => self.q0 = real(key, value)?,
            "q2" => self.q2 = real(key, value)?,
            "rln" => self.rln = real(key, value)?,
            "rlt" => self.rlt = real(key, value)?,
            "tau" => self.tau = real(key, value)?,
            "dt" => self.dt = real(key, value)?,
            "nsteps" => self.nsteps = int(key, value)?,
            "diag_every" => self.diag_every = int(key, value)?,
            "bin_every" => self.bin_every = int(key, value)?,
            "nghost" => self.nghost = int(key, value)?,
            "seed" => {
                self.seed = value.parse::<u64>().map_err(|_| Error::InvalidValue {
                    key: key.to_string(),
                    reason: format!("'{value}' is not a u64"),
                })?
            }
            "workers" => self.workers = int(key, value)?,
            other => return Err(Error::UnknownKey(other.to_string())),
        }
        Ok(())
    }
}

/// Parses a line-based `key=value` document ('#' starts a comment).
///
/// A `size=A|B|C|D` line selects the preset baseline (applied before any
/// other key regardless of position); remaining keys override it. Absent
/// keys keep their defaults. The result is validated.
pub fn parse_config(text: &str) -> Result<RunParams> {
    let mut entries = Vec::new();
    let mut size: Option<String> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::MalformedLine {
            line: lineno + 1,
            text: raw.to_string(),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(Error::MalformedLine {
                line: lineno + 1,
                text: raw.to_string(),
            });
        }
        if key == "size" {
            size = Some(value.to_string());
        } else {
            entries.push((key.to_string(), value.to_string()));
        }
    }
    let mut params = match size {
        Some(label) => preset(&label)?,
        None => RunParams::default(),
    };
    for (key, value) in &entries {
        params.set_key(key, value)?;
    }
    params.validate()?;
    Ok(params)
}

/// Serializes parameters to the normalized config document: every key, in
/// fixed order, one per line. `parse_config(serialize_config(p)) == p`.
pub fn serialize_config(params: &RunParams) -> String {
    let mut out = String::new();
    for key in KEYS {
        let value = match *key {
            "mpsi" => params.mpsi.to_string(),
            "mthetamax" => params.mthetamax.to_string(),
            "ntoroidal" => params.ntoroidal.to_string(),
            "micell" => params.micell.to_string(),
            "nradial_domains" => params.nradial_domains.to_string(),
            "ranks_toroidal" => params.ranks_toroidal.to_string(),
            "npartdom" => params.npartdom.to_string(),
            "a_over_rho" => params.a_over_rho.to_string(),
            "r_inner" => params.r_inner.to_string(),
            "r_outer" => params.r_outer.to_string(),
            "aspect_ratio" => params.aspect_ratio.to_string(),
            "q0" => params.q0.to_string(),
            "q2" => params.q2.to_string(),
            "rln" => params.rln.to_string(),
            "rlt" => params.rlt.to_string(),
            "tau" => params.tau.to_string(),
            "dt" => params.dt.to_string(),
            "nsteps" => params.nsteps.to_string(),
            "diag_every" => params.diag_every.to_string(),
            "bin_every" => params.bin_every.to_string(),
            "nghost" => params.nghost.to_string(),
            "seed" => params.seed.to_string(),
            "workers" => params.workers.to_string(),
            _ => unreachable!(),
        };
        out.push_str(key);
        out.push('=');
        out.push_str(&value);
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_values_match_size_table() {
        let a = preset("A").unwrap();
        assert_eq!((a.mpsi, a.mthetamax), (90, 640));
        assert_eq!(a.a_over_rho, 125.0);
        assert_eq!(a.ntoroidal, 64);
        assert_eq!(a.micell, 100);
        assert_eq!((a.rlt, a.rln, a.tau), (6.9, 2.2, 1.0));
        let b = preset("B").unwrap();
        assert_eq!((b.mpsi, b.mthetamax, b.a_over_rho), (180, 1280, 250.0));
        let c = preset("C").unwrap();
        assert_eq!((c.mpsi, c.mthetamax, c.a_over_rho), (360, 2560, 500.0));
        let d = preset("D").unwrap();
        assert_eq!((d.mpsi, d.mthetamax, d.a_over_rho), (720, 5120, 1000.0));
    }

    #[test]
    fn unknown_preset_rejected() {
        assert!(matches!(preset("E"), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn parse_preset_with_override() {
        let p = parse_config("size=A\nnsteps=100").unwrap();
        assert_eq!(p.mpsi, 90);
        assert_eq!(p.nsteps, 100);
        // size line applies first even when it comes last
        let p2 = parse_config("nsteps=7\nsize=A").unwrap();
        assert_eq!(p2.nsteps, 7);
    }

    #[test]
    fn parse_rejects_bad_input() {
        assert!(matches!(
            parse_config("mpsi=-1"),
            Err(Error::InvalidValue { .. })
        ));
        assert!(matches!(parse_config("mpsi=2"), Err(Error::Invariant(_))));
        assert!(matches!(
            parse_config("not a kv line"),
            Err(Error::MalformedLine { .. })
        ));
        assert!(matches!(
            parse_config("bogus_key=3"),
            Err(Error::UnknownKey(_))
        ));
        assert!(matches!(
            parse_config("r_inner=0.9\nr_outer=0.5"),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let p = parse_config("# header\n\nmpsi=12   # trailing\nmthetamax = 48\n").unwrap();
        assert_eq!((p.mpsi, p.mthetamax), (12, 48));
    }

    #[test]
    fn serialize_parse_roundtrip_on_presets() {
        for label in ["A", "B", "C", "D"] {
            let p = preset(label).unwrap();
            let text = serialize_config(&p);
            assert_eq!(parse_config(&text).unwrap(), p);
            // normalized documents are fixed points
            assert_eq!(serialize_config(&parse_config(&text).unwrap()), text);
        }
    }

    #[test]
    fn ntoroidal_sets_ranks_toroidal_unless_overridden() {
        let p = parse_config("ntoroidal=8").unwrap();
        assert_eq!(p.ranks_toroidal, 8);
        let p = parse_config("ntoroidal=8\nranks_toroidal=2").unwrap();
        assert_eq!(p.ranks_toroidal, 2);
        assert!(parse_config("ntoroidal=8\nranks_toroidal=3").is_err());
    }
}
