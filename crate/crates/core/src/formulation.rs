//! Four-oil recipes: the GA genome, its normalized phenotype, and the oil
//! property table the arena simulator draws its constants from.

use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Number of oils in a recipe.
pub const N_OILS: usize = 4;

/// Total oil volume mixed in one well, in µL.
pub const WELL_TOTAL_UL: f64 = 360.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormulationError {
    #[error("all recipe components are zero")]
    AllZero,
    #[error("recipe component {index} is negative ({value})")]
    Negative { index: usize, value: f64 },
    #[error("recipe component {index} is not finite")]
    NotFinite { index: usize },
    #[error("unknown oil `{0}`")]
    UnknownOil(String),
}

/// Raw GA genome: four loci in `[0, 1]`, not normalized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Genome {
    pub loci: [f64; N_OILS],
}

impl Genome {
    pub fn new(loci: [f64; N_OILS]) -> Self {
        let mut g = Genome { loci };
        g.clamp();
        g
    }

    pub fn clamp(&mut self) {
        for l in &mut self.loci {
            *l = l.clamp(0.0, 1.0);
        }
    }

    /// Normalized proportions of this genome.
    pub fn phenotype(&self) -> Result<Formulation<f64>, FormulationError> {
        normalize(self.loci)
    }
}

/// Proportions of the four oils, summing to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[T; N_OILS]", into = "[T; N_OILS]")]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct Formulation<T: Scalar = f64> {
    proportions: [T; N_OILS],
}

impl<T: Scalar> Formulation<T> {
    pub fn proportions(&self) -> &[T; N_OILS] {
        &self.proportions
    }

    pub fn into_array(self) -> [T; N_OILS] {
        self.proportions
    }

    /// The pure composition of oil `index`.
    pub fn pure(index: usize) -> Self {
        let mut p = [T::zero(); N_OILS];
        p[index] = T::one();
        Formulation { proportions: p }
    }

    pub fn uniform() -> Self {
        Formulation {
            proportions: [T::lit(0.25); N_OILS],
        }
    }
}

impl<T: Scalar> TryFrom<[T; N_OILS]> for Formulation<T> {
    type Error = FormulationError;

    fn try_from(raw: [T; N_OILS]) -> Result<Self, Self::Error> {
        normalize(raw)
    }
}

impl<T: Scalar> From<Formulation<T>> for [T; N_OILS] {
    fn from(f: Formulation<T>) -> Self {
        f.proportions
    }
}

impl<T: Scalar> fmt::Display for Formulation<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = &self.proportions;
        write!(f, "[{}, {}, {}, {}]", p[0], p[1], p[2], p[3])
    }
}

/// Scales nonnegative raw amounts onto the unit simplex.
pub fn normalize<T: Scalar>(raw: [T; N_OILS]) -> Result<Formulation<T>, FormulationError> {
    for (index, &v) in raw.iter().enumerate() {
        if !v.is_finite() {
            return Err(FormulationError::NotFinite { index });
        }
        if v < T::zero() {
            return Err(FormulationError::Negative {
                index,
                value: v.as_f64(),
            });
        }
    }
    let sum: T = raw.iter().copied().sum();
    if sum == T::zero() {
        return Err(FormulationError::AllZero);
    }
    // inputs already on the simplex up to rounding pass through untouched,
    // which makes normalize idempotent bit-for-bit
    if on_simplex(sum) {
        return Ok(Formulation { proportions: raw });
    }
    let mut proportions = raw.map(|v| v / sum);
    let s2: T = proportions.iter().copied().sum();
    if !on_simplex(s2) {
        proportions = proportions.map(|v| v / s2);
    }
    Ok(Formulation { proportions })
}

fn on_simplex<T: Scalar>(sum: T) -> bool {
    (sum - T::one()).abs() <= T::epsilon() * T::lit(16.0)
}

/// Oil volumes (µL) for mixing `total` µL of `f` in a well.
pub fn well_volumes<T: Scalar>(f: &Formulation<T>, total: T) -> [T; N_OILS] {
    f.proportions.map(|p| total * p)
}

/// Water solubility of an oil. Dodecane is listed as insoluble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "Option<f64>", into = "Option<f64>")]
pub enum Solubility {
    GramsPerLitre(f64),
    Insoluble,
}

impl Solubility {
    /// Value used in simulator arithmetic; insoluble counts as 0 g/L.
    pub fn grams_per_litre(self) -> f64 {
        match self {
            Solubility::GramsPerLitre(g) => g,
            Solubility::Insoluble => 0.0,
        }
    }
}

impl From<Option<f64>> for Solubility {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Solubility::Insoluble, Solubility::GramsPerLitre)
    }
}

impl From<Solubility> for Option<f64> {
    fn from(s: Solubility) -> Self {
        match s {
            Solubility::GramsPerLitre(g) => Some(g),
            Solubility::Insoluble => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OilProperties {
    pub name: String,
    /// g/mL at 20 °C
    pub density: f64,
    pub solubility: Solubility,
    /// mN/m
    pub surface_tension: f64,
    /// mPa·s
    pub viscosity: f64,
}

#[derive(Debug, Deserialize)]
struct OilFile {
    version: u32,
    oils: Vec<OilProperties>,
}

/// Raw contents of the versioned oil property data file.
pub const OIL_TABLE_JSON: &str = include_str!("../data/oils.json");

fn parsed_table() -> &'static (u32, Vec<OilProperties>) {
    static TABLE: OnceLock<(u32, Vec<OilProperties>)> = OnceLock::new();
    TABLE.get_or_init(|| {
        let file: OilFile = serde_json::from_str(OIL_TABLE_JSON).expect("bundled oils.json is valid");
        (file.version, file.oils)
    })
}

/// The five oils with their physical properties.
pub fn oil_table() -> Vec<OilProperties> {
    parsed_table().1.clone()
}

pub fn oil_table_version() -> u32 {
    parsed_table().0
}

pub fn lookup_oil(name: &str) -> Result<OilProperties, FormulationError> {
    parsed_table()
        .1
        .iter()
        .find(|o| o.name.eq_ignore_ascii_case(name))
        .cloned()
        .ok_or_else(|| FormulationError::UnknownOil(name.to_string()))
}

/// Which oil fills the fourth recipe slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FourthOil {
    #[default]
    OctanoicAcid,
    Dodecane,
}

impl FourthOil {
    pub fn oil_name(self) -> &'static str {
        match self {
            FourthOil::OctanoicAcid => "octanoic acid",
            FourthOil::Dodecane => "dodecane",
        }
    }
}

/// Oils in recipe order: 1-octanol, 1-pentanol, DEP, then the fourth oil.
pub fn recipe_oils(fourth: FourthOil) -> [OilProperties; N_OILS] {
    ["1-octanol", "1-pentanol", "DEP", fourth.oil_name()].map(|n| lookup_oil(n).expect("bundled oil present"))
}
