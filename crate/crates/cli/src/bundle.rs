//! Parameter bundles and item-grouping files.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use treelcm_core::{ClassProbability, DdtTree, DiffusionVariances, ItemGrouping};

use crate::error::{CliError, CliResult};

pub const BUNDLE_SCHEMA_VERSION: u32 = 1;

/// One major item group. `items` are 1-based column indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub name: String,
    pub items: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_labels: Option<Vec<String>>,
}

/// Either a single value shared by every item or one value per item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RootLocation {
    Shared(f64),
    PerItem(Vec<f64>),
}

impl Default for RootLocation {
    fn default() -> Self {
        RootLocation::Shared(0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterBundle {
    pub schema_version: u32,
    pub tree: String,
    pub class_probability: Vec<f64>,
    pub groups: Vec<GroupSpec>,
    #[serde(rename = "Sigma_by_group")]
    pub sigma_by_group: Vec<f64>,
    #[serde(default)]
    pub root_node_location: RootLocation,
}

/// Grouping file: the `groups` array of a bundle. Other fields are ignored
/// so a parameter bundle doubles as a grouping file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupingFile {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub groups: Vec<GroupSpec>,
}

fn default_schema() -> u32 {
    BUNDLE_SCHEMA_VERSION
}

/// Everything the simulator needs, checked for consistency.
#[derive(Clone, Debug)]
pub struct ValidatedBundle {
    pub tree: DdtTree,
    pub class_probability: ClassProbability,
    pub grouping: ItemGrouping,
    pub group_names: Vec<String>,
    pub item_labels: Vec<String>,
    pub variances: DiffusionVariances,
    pub root_location: Vec<f64>,
}

/// Parse JSON into `T`, reporting the path of the offending field.
pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> CliResult<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::schema(format!("{what}: at `{path}`: {}", e.inner()))
    })
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_json(&text, what)
}

/// Grouping, group names and item labels (missing labels become
/// `<lowercase group name>_<k>`). Column `j` (1-based) must appear in
/// exactly one group.
pub fn resolve_groups(groups: &[GroupSpec]) -> CliResult<(ItemGrouping, Vec<String>, Vec<String>)> {
    if groups.is_empty() {
        return Err(CliError::schema("groups: at least one group is required"));
    }
    let mut names = HashSet::new();
    for (g, spec) in groups.iter().enumerate() {
        if !names.insert(spec.name.as_str()) {
            return Err(CliError::schema(format!("groups[{g}].name: duplicate group name `{}`", spec.name)));
        }
        if let Some(labels) = &spec.item_labels {
            if labels.len() != spec.items.len() {
                return Err(CliError::schema(format!(
                    "groups[{g}].item_labels: {} labels for {} items",
                    labels.len(),
                    spec.items.len()
                )));
            }
        }
    }
    let lists: Vec<Vec<usize>> = groups.iter().map(|g| g.items.clone()).collect();
    let grouping = ItemGrouping::from_memberships(&lists).map_err(|e| CliError::schema(format!("groups: {e}")))?;
    let mut labels = vec![String::new(); grouping.n_items()];
    for spec in groups {
        for (k, &item) in spec.items.iter().enumerate() {
            labels[item - 1] = match &spec.item_labels {
                Some(l) => l[k].clone(),
                None => format!("{}_{}", spec.name.to_lowercase(), k + 1),
            };
        }
    }
    let mut seen = HashSet::new();
    if let Some(dup) = labels.iter().find(|l| !seen.insert(l.as_str())) {
        return Err(CliError::schema(format!("groups: duplicate item label `{dup}`")));
    }
    Ok((grouping, groups.iter().map(|g| g.name.clone()).collect(), labels))
}

impl ParameterBundle {
    pub fn load(path: &Path) -> CliResult<Self> {
        read_json(path, "parameter bundle")
    }

    pub fn validate(&self) -> CliResult<ValidatedBundle> {
        if self.schema_version != BUNDLE_SCHEMA_VERSION {
            return Err(CliError::schema(format!(
                "schema_version: unsupported version {}",
                self.schema_version
            )));
        }
        let tree = DdtTree::parse_newick(&self.tree).map_err(|e| CliError::schema(format!("tree: {e}")))?;
        let class_probability = ClassProbability::new(self.class_probability.clone())
            .map_err(|e| CliError::schema(format!("class_probability: {e}")))?;
        if class_probability.len() != tree.n_leaves() {
            return Err(CliError::schema(format!(
                "class_probability: {} entries for a tree with {} leaves",
                class_probability.len(),
                tree.n_leaves()
            )));
        }
        let (grouping, group_names, item_labels) = resolve_groups(&self.groups)?;
        if self.sigma_by_group.len() != grouping.n_groups() {
            return Err(CliError::schema(format!(
                "Sigma_by_group: {} entries for {} groups",
                self.sigma_by_group.len(),
                grouping.n_groups()
            )));
        }
        let variances = DiffusionVariances::new(self.sigma_by_group.clone())
            .map_err(|e| CliError::schema(format!("Sigma_by_group: {e}")))?;
        let j = grouping.n_items();
        let root_location = match &self.root_node_location {
            RootLocation::Shared(x) => vec![*x; j],
            RootLocation::PerItem(v) if v.len() == j => v.clone(),
            RootLocation::PerItem(v) => {
                return Err(CliError::schema(format!(
                    "root_node_location: {} values for {j} items",
                    v.len()
                )))
            }
        };
        if root_location.iter().any(|x| !x.is_finite()) {
            return Err(CliError::schema("root_node_location: values must be finite"));
        }
        Ok(ValidatedBundle {
            tree,
            class_probability,
            grouping,
            group_names,
            item_labels,
            variances,
            root_location,
        })
    }
}

impl GroupingFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        read_json(path, "grouping file")
    }
}
