//! Specification spaces, synthetic corpora and the empirical world-model prior.
//!
//! A [`Schema`] is an ordered list of discrete attributes. A [`Specification`]
//! picks one value per attribute. A [`WorldModel`] holds one independent
//! probability table per attribute, estimated from a corpus of complete
//! specifications by (optionally smoothed) frequency counting.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use indexmap::IndexMap;
use rand::distributions::{Distribution, WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Sum-to-one tolerance for probability tables.
pub const TABLE_TOLERANCE: f64 = 1e-9;

const DEMO_SCHEMA: &str = include_str!("../assets/demo_schema.json");
const DEMO_GENERATOR: &str = include_str!("../assets/demo_generator.json");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeGroup {
    Layout,
    Color,
    Components,
    Connections,
    Other,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub id: String,
    pub label: String,
    pub group: AttributeGroup,
    pub domain: Vec<String>,
}

impl Attribute {
    pub fn index_of(&self, value: &str) -> Option<usize> {
        self.domain.iter().position(|v| v == value)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub name: String,
    pub version: String,
    pub attributes: Vec<Attribute>,
}

impl Schema {
    /// The shipped 12-attribute diagram schema.
    pub fn demo() -> Self {
        Self::from_json(DEMO_SCHEMA).expect("shipped demo schema is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let schema: Schema =
            serde_json::from_str(text).map_err(|e| Error::json("schema", e))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("schema serializes");
        out.push('\n');
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.attributes.is_empty() {
            return Err(Error::Schema("schema has no attributes".into()));
        }
        let mut seen = HashSet::new();
        for attr in &self.attributes {
            let bad = |reason: &str| Error::Attribute {
                attribute: attr.id.clone(),
                reason: reason.to_string(),
            };
            if attr.id.trim().is_empty() {
                return Err(bad("attribute id is empty"));
            }
            if !seen.insert(attr.id.as_str()) {
                return Err(bad("duplicate attribute id"));
            }
            if attr.domain.len() < 2 {
                return Err(bad("domain needs at least two values"));
            }
            let mut values = HashSet::new();
            if let Some(dup) = attr.domain.iter().find(|v| !values.insert(v.as_str())) {
                return Err(bad(&format!("duplicate domain value `{dup}`")));
            }
        }
        Ok(())
    }

    /// `name@version`, used to tie world models back to their schema.
    pub fn reference(&self) -> String {
        format!("{}@{}", self.name, self.version)
    }

    pub fn attribute(&self, id: &str) -> Option<&Attribute> {
        self.attributes.iter().find(|a| a.id == id)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.id == id)
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    /// Number of points in the full specification space.
    pub fn joint_size(&self) -> u128 {
        self.attributes
            .iter()
            .map(|a| a.domain.len() as u128)
            .product()
    }
}

pub fn load_schema(path: impl AsRef<Path>) -> Result<Schema> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Schema::from_json(&text)
}

/// A complete assignment of one value per schema attribute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Specification {
    pub assignment: IndexMap<String, String>,
}

impl Specification {
    pub fn get(&self, id: &str) -> Option<&str> {
        self.assignment.get(id).map(String::as_str)
    }

    pub fn validate(&self, schema: &Schema) -> Result<()> {
        if self.assignment.len() != schema.len() {
            for id in self.assignment.keys() {
                if schema.attribute(id).is_none() {
                    return Err(Error::UnknownAttribute(id.clone()));
                }
            }
        }
        for attr in &schema.attributes {
            let value = self.assignment.get(&attr.id).ok_or_else(|| Error::Attribute {
                attribute: attr.id.clone(),
                reason: "specification has no value".into(),
            })?;
            if attr.index_of(value).is_none() {
                return Err(Error::UnknownValue {
                    attribute: attr.id.clone(),
                    value: value.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Per-attribute sampling weights for synthetic corpora.
///
/// Attributes missing from `weights` are sampled uniformly. For a listed
/// attribute, values missing from its map get weight zero.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    #[serde(default)]
    pub weights: IndexMap<String, IndexMap<String, f64>>,
}

impl GenConfig {
    /// Skewed weights matching [`Schema::demo`].
    pub fn demo() -> Self {
        serde_json::from_str(DEMO_GENERATOR).expect("shipped demo generator is valid")
    }

    pub fn uniform() -> Self {
        Self::default()
    }

    /// Normalized sampling distribution for `attr`, aligned with its domain.
    pub fn distribution(&self, attr: &Attribute) -> Result<Vec<f64>> {
        let raw: Vec<f64> = match self.weights.get(&attr.id) {
            None => vec![1.0; attr.domain.len()],
            Some(table) => {
                if let Some(value) = table.keys().find(|v| attr.index_of(v).is_none()) {
                    return Err(Error::UnknownValue {
                        attribute: attr.id.clone(),
                        value: value.clone(),
                    });
                }
                attr.domain
                    .iter()
                    .map(|v| table.get(v).copied().unwrap_or(0.0))
                    .collect()
            }
        };
        if raw.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Attribute {
                attribute: attr.id.clone(),
                reason: "sampling weights must be finite and nonnegative".into(),
            });
        }
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(Error::Attribute {
                attribute: attr.id.clone(),
                reason: "all sampling weights are zero".into(),
            });
        }
        Ok(raw.into_iter().map(|w| w / total).collect())
    }
}

/// Samples `n` specifications, each attribute drawn independently from `gen`.
pub fn generate_corpus(
    schema: &Schema,
    gen: &GenConfig,
    n: usize,
    seed: u64,
) -> Result<Vec<Specification>> {
    if n == 0 {
        return Err(Error::Config("corpus size must be at least 1".into()));
    }
    for id in gen.weights.keys() {
        if schema.attribute(id).is_none() {
            return Err(Error::UnknownAttribute(id.clone()));
        }
    }
    let samplers = schema
        .attributes
        .iter()
        .map(|attr| {
            let dist = gen.distribution(attr)?;
            WeightedIndex::new(&dist).map_err(|e| Error::Attribute {
                attribute: attr.id.clone(),
                reason: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rng = seed::rng(seed, "corpus", 0);
    Ok((0..n)
        .map(|_| Specification {
            assignment: schema
                .attributes
                .iter()
                .zip(&samplers)
                .map(|(attr, sampler)| {
                    (attr.id.clone(), attr.domain[sampler.sample(&mut rng)].clone())
                })
                .collect(),
        })
        .collect())
}

/// Empirical prior over each attribute, independently.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldModel {
    pub schema_ref: String,
    pub alpha: f64,
    pub corpus_size: usize,
    pub tables: IndexMap<String, IndexMap<String, f64>>,
}

impl WorldModel {
    /// Prior probabilities of `attr`, in domain order.
    pub fn table(&self, attr: &Attribute) -> Result<Vec<f64>> {
        let table = self
            .tables
            .get(&attr.id)
            .ok_or_else(|| Error::Attribute {
                attribute: attr.id.clone(),
                reason: "world model has no table".into(),
            })?;
        attr.domain
            .iter()
            .map(|v| {
                table.get(v).copied().ok_or_else(|| Error::UnknownValue {
                    attribute: attr.id.clone(),
                    value: v.clone(),
                })
            })
            .collect()
    }

    pub fn validate(&self, schema: &Schema) -> Result<()> {
        if self.schema_ref != schema.reference() {
            return Err(Error::Config(format!(
                "world model was built for `{}`, not `{}`",
                self.schema_ref,
                schema.reference()
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config("smoothing alpha must be nonnegative".into()));
        }
        if self.tables.len() != schema.len() {
            return Err(Error::Config(format!(
                "world model has {} tables, schema has {} attributes",
                self.tables.len(),
                schema.len()
            )));
        }
        for attr in &schema.attributes {
            let probs = self.table(attr)?;
            if self.tables[&attr.id].len() != attr.domain.len() {
                return Err(Error::Attribute {
                    attribute: attr.id.clone(),
                    reason: "table has values outside the domain".into(),
                });
            }
            if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::Attribute {
                    attribute: attr.id.clone(),
                    reason: "probabilities must be finite and nonnegative".into(),
                });
            }
            let total: f64 = probs.iter().sum();
            if (total - 1.0).abs() > TABLE_TOLERANCE {
                return Err(Error::Attribute {
                    attribute: attr.id.clone(),
                    reason: format!("table sums to {total}"),
                });
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str, schema: &Schema) -> Result<Self> {
        let wm: WorldModel =
            serde_json::from_str(text).map_err(|e| Error::json("world model", e))?;
        wm.validate(schema)?;
        Ok(wm)
    }

    /// Pretty JSON with every probability rounded to 12 significant digits.
    pub fn to_json(&self) -> String {
        let mut rounded = self.clone();
        for table in rounded.tables.values_mut() {
            for p in table.values_mut() {
                *p = round_significant(*p, 12);
            }
        }
        let mut out = serde_json::to_string_pretty(&rounded).expect("world model serializes");
        out.push('\n');
        out
    }
}

pub fn load_world_model(path: impl AsRef<Path>, schema: &Schema) -> Result<WorldModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    WorldModel::from_json(&text, schema)
}

/// `P(v) = (count(v) + alpha) / (|corpus| + alpha * |domain|)`; `alpha = 0` is
/// the plain maximum-likelihood estimate.
pub fn estimate_prior(
    schema: &Schema,
    corpus: &[Specification],
    smoothing_alpha: f64,
) -> Result<WorldModel> {
    if corpus.is_empty() {
        return Err(Error::Invalid("cannot estimate a prior from an empty corpus".into()));
    }
    if !(smoothing_alpha >= 0.0 && smoothing_alpha.is_finite()) {
        return Err(Error::Config("smoothing alpha must be nonnegative".into()));
    }
    for spec in corpus {
        spec.validate(schema)?;
    }
    let n = corpus.len() as f64;
    let tables = schema
        .attributes
        .iter()
        .map(|attr| {
            let mut counts = vec![0usize; attr.domain.len()];
            for spec in corpus {
                let value = &spec.assignment[&attr.id];
                counts[attr.index_of(value).expect("validated")] += 1;
            }
            let denom = n + smoothing_alpha * attr.domain.len() as f64;
            let table = attr
                .domain
                .iter()
                .zip(counts)
                .map(|(v, c)| (v.clone(), (c as f64 + smoothing_alpha) / denom))
                .collect();
            (attr.id.clone(), table)
        })
        .collect();
    Ok(WorldModel {
        schema_ref: schema.reference(),
        alpha: smoothing_alpha,
        corpus_size: corpus.len(),
        tables,
    })
}

pub fn round_significant(x: f64, digits: usize) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", digits.saturating_sub(1), x)
        .parse()
        .expect("formatted float parses")
}

pub fn write_corpus(path: impl AsRef<Path>, corpus: &[Specification]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for spec in corpus {
        serde_json::to_writer(&mut out, spec).map_err(|e| Error::json("corpus", e))?;
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_corpus(path: impl AsRef<Path>, schema: &Schema) -> Result<Vec<Specification>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut corpus = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let spec: Specification = serde_json::from_str(&line)
            .map_err(|e| Error::json(format!("{}:{}", path.display(), lineno + 1), e))?;
        spec.validate(schema)?;
        corpus.push(spec);
    }
    Ok(corpus)
}
