//! Scenario and template files (JSON, dense row-major matrices) and tube dumps (CSV).

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::ocp::{CostSpec, Halfspaces, SystemModel, TubeSolution};
use crate::sim::SamplePolicy;
use crate::template::{self, ConsistencyReport, ExtremalityRule, MetaTemplate, TemplateFamily};

pub type Rows = Vec<Vec<f64>>;

fn to_matrix(rows: &Rows, ncols_if_empty: usize) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Ok(DMatrix::zeros(0, ncols_if_empty));
    }
    let n = rows[0].len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::DimensionMismatch("ragged matrix rows".into()));
    }
    Ok(linalg::from_rows(rows))
}

fn from_matrix(m: &DMatrix<f64>) -> Rows {
    linalg::to_rows(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfspaceFile {
    pub a: Rows,
    pub b: Vec<f64>,
}

impl HalfspaceFile {
    fn to_model(&self, dim: usize) -> Result<Halfspaces> {
        Ok(Halfspaces::new(to_matrix(&self.a, dim)?, DVector::from_vec(self.b.clone())))
    }

    fn from_model(h: &Halfspaces) -> Self {
        HalfspaceFile { a: from_matrix(&h.a), b: h.b.as_slice().to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemFile {
    pub a: Rows,
    pub b: Rows,
    pub c: Rows,
    pub state: HalfspaceFile,
    pub input: HalfspaceFile,
    pub noise: HalfspaceFile,
    pub wbar: Vec<f64>,
    pub vbar: Vec<f64>,
}

impl SystemFile {
    pub fn to_model(&self) -> Result<SystemModel> {
        let a = to_matrix(&self.a, 0)?;
        let b = to_matrix(&self.b, 0)?;
        let c = to_matrix(&self.c, a.ncols())?;
        Ok(SystemModel {
            state: self.state.to_model(a.ncols())?,
            input: self.input.to_model(b.ncols())?,
            noise: self.noise.to_model(c.nrows())?,
            a,
            b,
            c,
            wbar: DVector::from_vec(self.wbar.clone()),
            vbar: DVector::from_vec(self.vbar.clone()),
        })
    }

    pub fn from_model(s: &SystemModel) -> Self {
        SystemFile {
            a: from_matrix(&s.a),
            b: from_matrix(&s.b),
            c: from_matrix(&s.c),
            state: HalfspaceFile::from_model(&s.state),
            input: HalfspaceFile::from_model(&s.input),
            noise: HalfspaceFile::from_model(&s.noise),
            wbar: s.wbar.as_slice().to_vec(),
            vbar: s.vbar.as_slice().to_vec(),
        }
    }
}

/// Template block; `lambda`, `omega`, `extreme` are optional precomputed data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateFile {
    pub y: Rows,
    pub g: Rows,
    pub z: Rows,
    pub h: Rows,
    pub sensor_rows: usize,
    #[serde(default)]
    pub rule: ExtremalityRule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<Rows>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<Vec<Rows>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extreme: Option<Vec<usize>>,
}

/// Raw matrices of a template block.
pub struct TemplateMatrices {
    pub y: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub h: DMatrix<f64>,
}

impl TemplateFile {
    pub fn matrices(&self) -> Result<TemplateMatrices> {
        let y = to_matrix(&self.y, 0)?;
        let g = to_matrix(&self.g, y.nrows())?;
        let z = to_matrix(&self.z, y.nrows())?;
        let h = to_matrix(&self.h, z.nrows())?;
        Ok(TemplateMatrices { y, g, z, h })
    }

    /// Consistency report on the raw matrices (before any synthesis).
    pub fn validate(&self) -> Result<ConsistencyReport> {
        let t = self.matrices()?;
        template::validate_raw(&t.y, &t.g, &t.z, self.sensor_rows, &t.h)
    }

    /// Builds the meta template, synthesizing whatever is not precomputed;
    /// refuses inconsistent data.
    pub fn load(&self) -> Result<MetaTemplate> {
        let t = self.matrices()?;
        let fam = match &self.lambda {
            Some(ls) => {
                let maps = ls.iter().map(|l| to_matrix(l, t.y.nrows())).collect::<Result<Vec<_>>>()?;
                TemplateFamily::new(t.y, t.g, maps)?
            }
            None => TemplateFamily::synthesize(t.y, t.g)?,
        };
        let fam = Arc::new(fam);
        match (&self.omega, &self.extreme) {
            (Some(os), Some(ex)) => {
                let maps = os.iter().map(|o| to_matrix(o, t.z.nrows())).collect::<Result<Vec<_>>>()?;
                MetaTemplate::from_parts(fam, t.z, self.sensor_rows, t.h, maps, ex.clone(), self.rule)
            }
            _ => MetaTemplate::synthesize(fam, t.z, self.sensor_rows, t.h, self.rule),
        }
    }

    /// The completed bundle of a synthesized meta template.
    pub fn from_meta(meta: &MetaTemplate) -> Self {
        let fam = meta.family();
        TemplateFile {
            y: from_matrix(fam.facets()),
            g: from_matrix(fam.cone()),
            z: from_matrix(meta.ensemble()),
            h: from_matrix(meta.meta_cone()),
            sensor_rows: meta.sensor_rows(),
            rule: meta.rule(),
            lambda: Some(fam.vertex_maps().iter().map(from_matrix).collect()),
            omega: Some(meta.meta_maps().iter().map(from_matrix).collect()),
            extreme: Some(meta.extreme().to_vec()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFile {
    pub horizon: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Initial information set as a box, or directly as `ŷ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0_lo: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0_hi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yhat: Option<Vec<f64>>,
    #[serde(default)]
    pub disturbance: SamplePolicy,
    #[serde(default)]
    pub noise: SamplePolicy,
}

fn default_steps() -> usize {
    30
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub system: SystemFile,
    pub template: TemplateFile,
    pub cost: CostSpec,
    pub run: RunFile,
}

/// A loaded and validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub system: SystemModel,
    pub meta: MetaTemplate,
    pub cost: CostSpec,
    pub run: RunFile,
}

impl Scenario {
    /// `ŷ` of the initial information set.
    pub fn initial_parameter(&self) -> Result<DVector<f64>> {
        let fam = self.meta.family();
        match (&self.run.yhat, &self.run.x0_lo, &self.run.x0_hi) {
            (Some(y), _, _) => {
                if y.len() != fam.num_facets() {
                    return Err(Error::DimensionMismatch(format!("ŷ has length {}", y.len())));
                }
                Ok(DVector::from_vec(y.clone()))
            }
            (None, Some(lo), Some(hi)) => {
                if lo.len() != fam.dim() || hi.len() != fam.dim() {
                    return Err(Error::DimensionMismatch("x0 box has the wrong dimension".into()));
                }
                Ok(fam.box_parameter(lo, hi))
            }
            _ => Err(Error::Invalid("run block needs yhat or x0_lo/x0_hi".into())),
        }
    }

    /// Box from which initial true states are drawn (the bounding box of `P(ŷ)`).
    pub fn initial_box(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        if let (Some(lo), Some(hi)) = (&self.run.x0_lo, &self.run.x0_hi) {
            return Ok((lo.clone(), hi.clone()));
        }
        let verts = crate::polytope::hrep_vertices(self.meta.family().facets(), &self.initial_parameter()?)?;
        let n = self.meta.family().dim();
        let lo = (0..n).map(|i| verts.iter().map(|v| v.point[i]).fold(f64::INFINITY, f64::min)).collect();
        let hi = (0..n).map(|i| verts.iter().map(|v| v.point[i]).fold(f64::NEG_INFINITY, f64::max)).collect();
        Ok((lo, hi))
    }
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(&self) -> Result<Scenario> {
        let meta = self.template.load()?;
        let system = self.system.to_model()?;
        system.validate(meta.family())?;
        Ok(Scenario { system, meta, cost: self.cost.clone(), run: self.run.clone() })
    }
}

/// The bundled case-study scenario.
pub fn case_study_scenario() -> ScenarioFile {
    use crate::case_study as cs;
    ScenarioFile {
        system: SystemFile::from_model(&cs::system()),
        template: TemplateFile {
            y: from_matrix(&cs::facets()),
            g: from_matrix(&cs::cone()),
            z: from_matrix(&cs::ensemble()),
            h: from_matrix(&cs::meta_cone()),
            sensor_rows: cs::SENSOR_ROWS,
            rule: ExtremalityRule::default(),
            lambda: None,
            omega: None,
            extreme: None,
        },
        cost: cs::cost(cs::TAU),
        run: RunFile {
            horizon: cs::HORIZON,
            steps: 30,
            seeds: (0..10).collect(),
            x0_lo: Some(cs::X0_LO.to_vec()),
            x0_hi: Some(cs::X0_HI.to_vec()),
            yhat: None,
            disturbance: SamplePolicy::UniformVertex,
            noise: SamplePolicy::UniformVertex,
        },
    }
}

/// Schema version of [`write_tube_csv`].
pub const TUBE_CSV_VERSION: u32 = 1;

/// Tube dump: one row per `(k, quantity, j)`; `j` is empty for `z`, `ζ`.
/// Columns: `k,quantity,j,v0,v1,…` padded to the longest vector.
pub fn write_tube_csv<W: Write>(tube: &TubeSolution, out: W) -> Result<()> {
    let width = tube
        .z
        .iter()
        .chain(&tube.zeta)
        .chain(tube.xi.iter().flatten())
        .chain(tube.u.iter().flatten())
        .map(|v| v.len())
        .max()
        .unwrap_or(0);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["k".to_string(), "quantity".into(), "j".into()];
    header.extend((0..width).map(|i| format!("v{i}")));
    w.write_record(&header)?;
    let mut emit = |k: usize, q: &str, j: Option<usize>, v: &DVector<f64>| -> Result<()> {
        let mut row = vec![k.to_string(), q.to_string(), j.map(|j| j.to_string()).unwrap_or_default()];
        row.extend(v.iter().map(|x| format!("{x:e}")));
        row.resize(3 + width, String::new());
        w.write_record(&row)?;
        Ok(())
    };
    for (k, z) in tube.z.iter().enumerate() {
        emit(k, "z", None, z)?;
    }
    for (k, zeta) in tube.zeta.iter().enumerate() {
        emit(k, "zeta", None, zeta)?;
    }
    for (k, xs) in tube.xi.iter().enumerate() {
        for (j, x) in xs.iter().enumerate() {
            emit(k, "xi", Some(j), x)?;
        }
    }
    for (k, us) in tube.u.iter().enumerate() {
        for (j, u) in us.iter().enumerate() {
            emit(k, "u", Some(j), u)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads back `(k, quantity, j, values)` rows of a tube dump.
pub fn read_tube_csv(text: &str) -> Result<Vec<(usize, String, Option<usize>, Vec<f64>)>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse_err = |e: std::num::ParseIntError| Error::Io(e.to_string());
        let k: usize = rec[0].parse().map_err(parse_err)?;
        let j = if rec[2].is_empty() { None } else { Some(rec[2].parse().map_err(parse_err)?) };
        let vals = rec
            .iter()
            .skip(3)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|e| Error::Io(e.to_string())))
            .collect::<Result<Vec<f64>>>()?;
        out.push((k, rec[1].to_string(), j, vals));
    }
    Ok(out)
}
