//! Effective solver options: flags override the file, the file overrides defaults.

use posmu::mu_core::{EngineOptions, MuOptions};
use posmu::systems::GridSpec;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::cli::GlobalArgs;
use crate::problem::{FileOptions, GridEntry};
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectiveOptions {
    pub tol: f64,
    pub gap_tol: f64,
    pub seed: u64,
    pub restarts: usize,
    pub ascent_iters: usize,
    pub max_iter: usize,
    /// `None` means the automatic grid.
    pub grid: Option<GridEntry>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl EffectiveOptions {
    pub fn resolve(flags: &GlobalArgs, file: &FileOptions) -> Result<Self, CliError> {
        let d = MuOptions::default();
        let opts = Self {
            tol: flags.tol.or(file.tol).unwrap_or(d.tol),
            gap_tol: flags.gap_tol.or(file.gap_tol).unwrap_or(d.gap_tol),
            seed: flags.seed.or(file.seed).unwrap_or(d.seed),
            restarts: flags.restarts.or(file.restarts).unwrap_or(d.restarts),
            ascent_iters: d.ascent_iters,
            max_iter: flags.max_iter.or(file.max_iter).unwrap_or(d.engine.max_iter),
            grid: flags.grid.or(file.grid),
            extra: Map::new(),
        };
        opts.validate()?;
        Ok(opts)
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |what: &str| Err(CliError::Input(format!("options.{what}")));
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return bad(&format!("tol: {} is outside (0, 1)", self.tol));
        }
        if !(self.gap_tol >= 0.0 && self.gap_tol.is_finite()) {
            return bad(&format!("gap_tol: {} must be nonnegative", self.gap_tol));
        }
        if self.restarts == 0 {
            return bad("restarts: at least one restart is required");
        }
        if self.max_iter == 0 {
            return bad("max_iter: must be positive");
        }
        if let Some(g) = self.grid {
            if !(g.lo > 0.0 && g.hi > g.lo && g.hi.is_finite()) || g.points < 2 {
                return bad(&format!("grid: need 0 < lo < hi and at least 2 points, got {}:{}:{}", g.lo, g.hi, g.points));
            }
        }
        Ok(())
    }

    pub fn mu(&self) -> MuOptions {
        MuOptions {
            tol: self.tol,
            gap_tol: self.gap_tol,
            restarts: self.restarts,
            ascent_iters: self.ascent_iters,
            seed: self.seed,
            engine: EngineOptions { max_iter: self.max_iter, ..EngineOptions::default() },
        }
    }

    pub fn grid_spec(&self) -> GridSpec {
        match self.grid {
            Some(g) => GridSpec::Explicit { lo: g.lo, hi: g.hi, points: g.points },
            None => GridSpec::default(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl Into<Value>) {
        self.extra.insert(key.to_string(), value.into());
    }
}

/// Parses `lo:hi:count`.
pub fn parse_grid(s: &str) -> Result<GridEntry, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, points] = parts.as_slice() else {
        return Err(format!("expected lo:hi:count, got {s:?}"));
    };
    let lo: f64 = lo.parse().map_err(|e| format!("lo: {e}"))?;
    let hi: f64 = hi.parse().map_err(|e| format!("hi: {e}"))?;
    let points: usize = points.parse().map_err(|e| format!("count: {e}"))?;
    Ok(GridEntry { lo, hi, points })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_flag() {
        assert_eq!(parse_grid("1e-3:1e3:50").unwrap(), GridEntry { lo: 1e-3, hi: 1e3, points: 50 });
        assert!(parse_grid("1:2").is_err());
        assert!(parse_grid("a:2:3").is_err());
    }

    #[test]
    fn flags_win_over_the_file() {
        let flags = GlobalArgs { tol: Some(1e-8), ..GlobalArgs::default() };
        let file = FileOptions { tol: Some(1e-3), seed: Some(5), ..FileOptions::default() };
        let o = EffectiveOptions::resolve(&flags, &file).unwrap();
        assert_eq!(o.tol, 1e-8);
        assert_eq!(o.seed, 5);
        assert_eq!(o.restarts, MuOptions::default().restarts);
    }

    #[test]
    fn out_of_range_values_are_input_errors() {
        let flags = GlobalArgs { tol: Some(-1.0), ..GlobalArgs::default() };
        assert!(EffectiveOptions::resolve(&flags, &FileOptions::default()).is_err());
        let flags = GlobalArgs { grid: Some(GridEntry { lo: 10.0, hi: 1.0, points: 5 }), ..GlobalArgs::default() };
        assert!(EffectiveOptions::resolve(&flags, &FileOptions::default()).is_err());
    }
}
