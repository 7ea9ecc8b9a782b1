//! Study configuration, shared by the command line and JSON config files.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use hdivproj::fields::{FieldSpec, QuadPolicy};
use hdivproj::local_solve::Variant;
use hdivproj::mesh::{BoundaryRule, Mesh};
use serde::{Deserialize, Serialize};

/// Where the coarsest mesh comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum MeshSource {
    /// `structured:n`, the unit square split into `2n²` triangles.
    Structured(usize),
    /// `lshape:n`, `[-1,1]² \ (0,1]×[-1,0)` with the reentrant corner at the origin.
    LShape(usize),
    File(PathBuf),
}

impl FromStr for MeshSource {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse_n = |n: &str| -> Result<usize> {
            let n: usize = n.parse().with_context(|| format!("bad subdivision count in `{s}`"))?;
            if n == 0 {
                bail!("subdivision count in `{s}` must be positive");
            }
            Ok(n)
        };
        if let Some(n) = s.strip_prefix("structured:") {
            Ok(MeshSource::Structured(parse_n(n)?))
        } else if let Some(n) = s.strip_prefix("lshape:") {
            Ok(MeshSource::LShape(parse_n(n)?))
        } else {
            Ok(MeshSource::File(PathBuf::from(s)))
        }
    }
}

/// Builds a mesh from a source string and an optional label override: a
/// boundary rule (`all-dirichlet`, `all-neumann`, `neumann:left,top`) or a
/// JSON labels file. Generated meshes default to all-Dirichlet; file meshes
/// keep their own labels.
pub fn load_mesh(source: &str, labels: Option<&str>) -> Result<Mesh> {
    let rule = match labels {
        Some(l) => match BoundaryRule::from_str(l) {
            Ok(rule) => Some(rule),
            Err(_) if Path::new(l).exists() => None,
            Err(e) => return Err(e).with_context(|| format!("`{l}` is neither a boundary rule nor a file")),
        },
        None => None,
    };
    let default_rule = rule.clone().unwrap_or(BoundaryRule::AllDirichlet);
    let mesh = match source.parse::<MeshSource>()? {
        MeshSource::Structured(n) => Mesh::unit_square(n, &default_rule)?,
        MeshSource::LShape(n) => Mesh::lshape(n, &default_rule)?,
        MeshSource::File(path) => {
            let mesh = Mesh::load(&path).with_context(|| format!("loading mesh {}", path.display()))?;
            match &rule {
                Some(rule) => mesh.relabel(rule)?,
                None => mesh,
            }
        }
    };
    match (labels, rule) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading labels {path}"))?;
            Ok(mesh.relabel_from_json(&text)?)
        }
        _ => Ok(mesh),
    }
}

/// Parameters of a study run. Every field has a command-line flag of the same
/// name; a JSON config file holds the same keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    /// Catalog field, e.g. `sine_divfree` or `lshape_singular:2/3`.
    pub field: String,
    /// `structured:n`, `lshape:n` or a mesh file.
    pub mesh: String,
    pub labels: Option<String>,
    /// Number of mesh levels, the coarsest included.
    pub refinements: usize,
    pub p: Vec<usize>,
    /// Lagrange degree for the least-squares solver (default `p + 1`).
    pub q: Option<usize>,
    pub variant: Variant,
    pub quad_degree: Option<usize>,
    /// Allowed deviation of fitted h-slopes (default 0.1 for smooth fields,
    /// 0.15 otherwise).
    pub tol: Option<f64>,
    /// Seed for random discrete fields that do not name their own.
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            field: "sine_divfree".into(),
            mesh: "structured:2".into(),
            labels: None,
            refinements: 4,
            p: vec![0, 1, 2],
            q: None,
            variant: Variant::Def31,
            quad_degree: None,
            tol: None,
            seed: 0,
            out: None,
            threads: None,
        }
    }
}

impl StudyConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: StudyConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    /// The field, with `seed` filled in for random fields that omit one.
    pub fn field_spec(&self) -> Result<FieldSpec> {
        let spec: FieldSpec = self.field.parse()?;
        let explicit_seed = if self.field.contains('(') {
            self.field.contains(',')
        } else {
            self.field.matches(':').count() >= 2
        };
        Ok(match spec {
            FieldSpec::RandomRtn { degree, .. } if !explicit_seed => {
                FieldSpec::RandomRtn { degree, seed: self.seed }
            }
            other => other,
        })
    }

    pub fn policy(&self) -> QuadPolicy {
        QuadPolicy::with_override(self.quad_degree)
    }

    pub fn validate(&self) -> Result<()> {
        self.field_spec()?;
        self.mesh.parse::<MeshSource>()?;
        if self.refinements == 0 {
            bail!("refinements must be at least 1");
        }
        if self.p.is_empty() {
            bail!("no polynomial degree given");
        }
        if self.variant == Variant::Def52 && self.p.contains(&0) {
            bail!("the def52 variant needs p >= 1");
        }
        if let Some(tol) = self.tol {
            if !(tol > 0.0 && tol.is_finite()) {
                bail!("tolerance must be positive, got {tol}");
            }
        }
        Ok(())
    }

    /// The mesh hierarchy: the base mesh and `refinements - 1` uniform refinements.
    pub fn meshes(&self) -> Result<Vec<Arc<Mesh>>> {
        let mut mesh = load_mesh(&self.mesh, self.labels.as_deref())?;
        let mut out = Vec::with_capacity(self.refinements);
        for level in 0..self.refinements {
            if level > 0 {
                mesh = mesh.refine_uniform();
            }
            out.push(Arc::new(mesh.clone()));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_mesh_sources() {
        assert_eq!("structured:4".parse::<MeshSource>().unwrap(), MeshSource::Structured(4));
        assert_eq!("lshape:2".parse::<MeshSource>().unwrap(), MeshSource::LShape(2));
        assert!("structured:0".parse::<MeshSource>().is_err());
        assert!("structured:x".parse::<MeshSource>().is_err());
        assert_eq!(
            "meshes/a.json".parse::<MeshSource>().unwrap(),
            MeshSource::File("meshes/a.json".into())
        );
    }

    #[test]
    fn json_round_trip_and_defaults() {
        let cfg = StudyConfig {
            p: vec![1, 2],
            variant: Variant::Def52,
            ..Default::default()
        };
        let back: StudyConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        let partial: StudyConfig = serde_json::from_str(r#"{"field": "cubic", "refinements": 2}"#).unwrap();
        assert_eq!(partial.field, "cubic");
        assert_eq!(partial.p, vec![0, 1, 2]);
        assert!(serde_json::from_str::<StudyConfig>(r#"{"feild": "cubic"}"#).is_err());
    }

    #[test]
    fn validation_rejects_bad_configs() {
        assert!(StudyConfig::default().validate().is_ok());
        let bad = [
            StudyConfig { refinements: 0, ..Default::default() },
            StudyConfig { field: "nope".into(), ..Default::default() },
            StudyConfig { variant: Variant::Def52, ..Default::default() },
            StudyConfig { p: vec![], ..Default::default() },
            StudyConfig { tol: Some(-1.0), ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn random_fields_take_the_config_seed() {
        let cfg = StudyConfig { field: "random_rtn:1".into(), seed: 9, ..Default::default() };
        assert_eq!(cfg.field_spec().unwrap(), FieldSpec::RandomRtn { degree: 1, seed: 9 });
        let cfg = StudyConfig { field: "random_rtn:1:3".into(), seed: 9, ..Default::default() };
        assert_eq!(cfg.field_spec().unwrap(), FieldSpec::RandomRtn { degree: 1, seed: 3 });
        let cfg = StudyConfig { field: "random_rtn(1,3)".into(), seed: 9, ..Default::default() };
        assert_eq!(cfg.field_spec().unwrap(), FieldSpec::RandomRtn { degree: 1, seed: 3 });
    }

    #[test]
    fn hierarchy_halves_the_mesh_size() {
        let cfg = StudyConfig { refinements: 3, ..Default::default() };
        let meshes = cfg.meshes().unwrap();
        assert_eq!(meshes.len(), 3);
        assert!((meshes[2].h_max() - meshes[0].h_max() / 4.0).abs() < 1e-14);
        let neumann = load_mesh("structured:2", Some("neumann:top")).unwrap();
        assert!(neumann.has_neumann() && neumann.has_dirichlet());
    }
}
