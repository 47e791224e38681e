use std::fmt;
use std::str::FromStr;

use geonet::{ScopeSchedule, Variant};

/// Per-dataset hyper-parameter rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    /// Fixed half-width for CFN-RW.
    pub lambda: f64,
    /// Scope grid for the constrained variants.
    pub scopes: &'static str,
    pub tol: f64,
    pub l_max: usize,
    pub t_max: usize,
}

#[rustfmt::skip]
pub const PRESETS: [Preset; 7] = [
    Preset { name: "function", lambda: 150.0, scopes: "150:10:200", tol: 0.05, l_max: 200, t_max: 20 },
    Preset { name: "winequality", lambda: 0.5, scopes: "0.5:0.1:5", tol: 0.05, l_max: 100, t_max: 20 },
    Preset { name: "anacal", lambda: 1.0, scopes: "0.5:0.1:5", tol: 0.05, l_max: 150, t_max: 20 },
    Preset { name: "delta_ail", lambda: 1.0, scopes: "1:10:100", tol: 0.05, l_max: 100, t_max: 20 },
    Preset { name: "plastic", lambda: 0.5, scopes: "0.5:10:200", tol: 0.05, l_max: 100, t_max: 20 },
    Preset { name: "compactiv", lambda: 0.5, scopes: "1:10:50", tol: 0.05, l_max: 100, t_max: 20 },
    Preset { name: "grinding", lambda: 150.0, scopes: "150:1:500", tol: 0.05, l_max: 100, t_max: 20 },
];

impl Preset {
    pub fn scopes_for(&self, variant: Variant) -> ScopeSchedule {
        if variant == Variant::CfnRw {
            ScopeSchedule::fixed(self.lambda).expect("preset lambda is positive")
        } else {
            self.scopes.parse().expect("preset scopes parse")
        }
    }

    pub fn t_max_for(&self, variant: Variant) -> usize {
        if variant == Variant::CfnRw {
            1
        } else {
            self.t_max
        }
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        PRESETS
            .iter()
            .find(|p| p.name == key)
            .copied()
            .ok_or_else(|| {
                let names: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
                format!("unknown preset {s:?}; expected one of {}", names.join(", "))
            })
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name)
    }
}
