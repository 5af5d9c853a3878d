use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::spin::HalfInteger;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lattice {
    Honeycomb,
    Square,
    Triangular,
}

impl Lattice {
    /// Internal (orbital) degrees of freedom per cell.
    pub fn orbitals(self) -> usize {
        match self {
            Lattice::Honeycomb => 2,
            Lattice::Square | Lattice::Triangular => 1,
        }
    }
}

/// Which bonds carry the Rashba term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RashbaRange {
    /// `i lambda_Ra (2s x d)_z` on nearest-neighbour bonds.
    #[default]
    Nearest,
    /// `i lambda_Ra mu_i (2s x d)_z` on second-neighbour bonds, `mu = +1 (A), -1 (B)`.
    NextNearest,
}

/// Rational flux per unit cell in units of the flux quantum, `p/q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Flux {
    pub p: i64,
    pub q: u64,
}

impl Flux {
    pub const ZERO: Flux = Flux { p: 0, q: 1 };

    pub fn new(p: i64, q: u64) -> Result<Self> {
        if q == 0 {
            return Err(Error::invalid("flux denominator must be positive"));
        }
        let g = gcd(p.unsigned_abs(), q);
        Ok(Flux { p: p / g as i64, q: q / g })
    }

    pub fn is_zero(self) -> bool {
        self.p == 0
    }

    pub fn value(self) -> f64 {
        self.p as f64 / self.q as f64
    }

    /// True if `flux * n` is an integer.
    pub fn divides(self, n: u64) -> bool {
        (self.p.unsigned_abs() as u128 * n as u128) % self.q as u128 == 0
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a.max(1)
    } else {
        gcd(b, a % b)
    }
}

impl fmt::Display for Flux {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.q == 1 {
            write!(f, "{}", self.p)
        } else {
            write!(f, "{}/{}", self.p, self.q)
        }
    }
}

impl FromStr for Flux {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::invalid(format!("flux {s:?} is not a rational p/q"));
        match s.split_once('/') {
            Some((p, q)) => Flux::new(p.trim().parse().map_err(|_| bad())?, q.trim().parse().map_err(|_| bad())?),
            None => Flux::new(s.parse().map_err(|_| bad())?, 1),
        }
    }
}

impl Serialize for Flux {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ser.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Flux {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Int(i64),
            Str(String),
        }
        match Repr::deserialize(de)? {
            Repr::Int(p) => Flux::new(p, 1),
            Repr::Str(s) => s.parse(),
        }
        .map_err(serde::de::Error::custom)
    }
}

fn default_axis() -> [f64; 3] {
    [1.0, 0.0, 0.0]
}

/// Declarative description of a tight-binding model.
///
/// Energies are in units of the nearest-neighbour hopping scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub lattice: Lattice,
    pub s: f64,
    #[serde(rename = "R")]
    pub orbitals: usize,
    pub t_hop: f64,
    #[serde(rename = "lambda_SO")]
    pub lambda_so: f64,
    #[serde(rename = "lambda_Ra")]
    pub lambda_ra: f64,
    #[serde(rename = "lambda_Ze")]
    pub lambda_ze: f64,
    #[serde(rename = "lambda_dis")]
    pub lambda_dis: f64,
    #[serde(default = "default_axis")]
    pub zeeman_axis: [f64; 3],
    #[serde(rename = "flux_B", default = "zero_flux")]
    pub flux: Flux,
    #[serde(default)]
    pub seed: u64,
    #[serde(rename = "E_g", default)]
    pub e_g: f64,
    /// Staggered sublattice potential `+lambda_v` on A, `-lambda_v` on B.
    #[serde(default)]
    pub lambda_v: f64,
    #[serde(default)]
    pub rashba_range: RashbaRange,
}

fn zero_flux() -> Flux {
    Flux::ZERO
}

impl ModelSpec {
    /// Clean spin-1/2 Kane-Mele model with `t = 1`.
    pub fn kane_mele(lambda_so: f64) -> Self {
        ModelSpec {
            lattice: Lattice::Honeycomb,
            s: 0.5,
            orbitals: 2,
            t_hop: 1.0,
            lambda_so,
            lambda_ra: 0.0,
            lambda_ze: 0.0,
            lambda_dis: 0.0,
            zeeman_axis: default_axis(),
            flux: Flux::ZERO,
            seed: 0,
            e_g: 0.0,
            lambda_v: 0.0,
            rashba_range: RashbaRange::Nearest,
        }
    }

    pub fn with_rashba(mut self, v: f64) -> Self {
        self.lambda_ra = v;
        self
    }

    pub fn with_zeeman(mut self, v: f64) -> Self {
        self.lambda_ze = v;
        self
    }

    pub fn with_disorder(mut self, v: f64, seed: u64) -> Self {
        self.lambda_dis = v;
        self.seed = seed;
        self
    }

    pub fn with_staggered(mut self, v: f64) -> Self {
        self.lambda_v = v;
        self
    }

    pub fn with_flux(mut self, flux: Flux) -> Self {
        self.flux = flux;
        self
    }

    pub fn spin(&self) -> Result<HalfInteger> {
        HalfInteger::from_f64(self.s)
    }

    /// Per-cell fiber dimension `L = R r`.
    pub fn fiber_dim(&self) -> Result<usize> {
        Ok(self.orbitals * self.spin()?.dim())
    }

    /// True when no term breaks `s^z` conservation.
    pub fn conserves_sz(&self) -> bool {
        self.lambda_ra == 0.0 && (self.lambda_ze == 0.0 || self.zeeman_in_plane_norm() == 0.0)
    }

    fn zeeman_in_plane_norm(&self) -> f64 {
        self.zeeman_axis[0].hypot(self.zeeman_axis[1])
    }

    /// Name of the first coupling that breaks `s^z` conservation.
    pub fn nonconserving_coupling(&self) -> Option<&'static str> {
        if self.lambda_ra != 0.0 {
            Some("lambda_Ra")
        } else if self.lambda_ze != 0.0 && self.zeeman_in_plane_norm() != 0.0 {
            Some("lambda_Ze")
        } else {
            None
        }
    }

    /// Same model without disorder.
    pub fn clean(&self) -> Self {
        let mut c = self.clone();
        c.lambda_dis = 0.0;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.spin()?;
        if self.orbitals != self.lattice.orbitals() {
            return Err(Error::invalid(format!(
                "R = {} incompatible with {:?} lattice (needs {})",
                self.orbitals,
                self.lattice,
                self.lattice.orbitals()
            )));
        }
        let finite = [
            self.t_hop,
            self.lambda_so,
            self.lambda_ra,
            self.lambda_ze,
            self.lambda_dis,
            self.e_g,
            self.lambda_v,
        ];
        if finite.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("couplings must be finite"));
        }
        let n = self.zeeman_axis.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (n - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("zeeman_axis must be a unit vector (norm {n})")));
        }
        if self.rashba_range == RashbaRange::NextNearest && self.lattice != Lattice::Honeycomb && self.lambda_ra != 0.0 {
            return Err(Error::invalid("next-nearest Rashba is only defined on the honeycomb lattice"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_field_names() {
        let spec = ModelSpec::kane_mele(0.2).with_flux(Flux::new(1, 4).unwrap());
        let v = serde_json::to_value(&spec).unwrap();
        for key in [
            "lattice", "s", "R", "t_hop", "lambda_SO", "lambda_Ra", "lambda_Ze", "lambda_dis", "zeeman_axis",
            "flux_B", "seed", "E_g",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["flux_B"], "1/4");
        let back: ModelSpec = serde_json::from_value(v).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn unknown_fields_rejected() {
        let mut v = serde_json::to_value(ModelSpec::kane_mele(0.2)).unwrap();
        v["lambda_XX"] = 1.0.into();
        assert!(serde_json::from_value::<ModelSpec>(v).is_err());
    }

    #[test]
    fn flux_parsing() {
        assert_eq!("2/4".parse::<Flux>().unwrap(), Flux { p: 1, q: 2 });
        assert_eq!("0".parse::<Flux>().unwrap(), Flux::ZERO);
        assert!("1/0".parse::<Flux>().is_err());
        assert!("x".parse::<Flux>().is_err());
        let f: Flux = serde_json::from_str("0").unwrap();
        assert!(f.is_zero());
        assert!(Flux::new(1, 3).unwrap().divides(6));
        assert!(!Flux::new(1, 3).unwrap().divides(4));
    }

    #[test]
    fn validation() {
        let mut spec = ModelSpec::kane_mele(0.2);
        assert!(spec.validate().is_ok());
        spec.orbitals = 1;
        assert!(spec.validate().is_err());
        let mut spec = ModelSpec::kane_mele(0.2);
        spec.s = 1.0;
        assert!(spec.validate().is_err());
        let mut spec = ModelSpec::kane_mele(0.2);
        spec.zeeman_axis = [1.0, 1.0, 0.0];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn conservation_flags() {
        assert!(ModelSpec::kane_mele(0.2).conserves_sz());
        assert_eq!(ModelSpec::kane_mele(0.2).with_rashba(0.1).nonconserving_coupling(), Some("lambda_Ra"));
        let mut z = ModelSpec::kane_mele(0.2).with_zeeman(0.1);
        assert_eq!(z.nonconserving_coupling(), Some("lambda_Ze"));
        z.zeeman_axis = [0.0, 0.0, 1.0];
        assert!(z.conserves_sz());
    }
}
