use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of classes in the reference dataset (14 crops, 26 diseases plus
/// 12 healthy categories).
pub const CLASS_COUNT: usize = 38;
pub const HEALTHY_CLASS_COUNT: usize = 12;
pub const PLANT_COUNT: usize = 14;

const REFERENCE_CLASSES_JSON: &str = include_str!("../../data/classes.json");

/// Published per-class split sizes of the source dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceCounts {
    pub train: usize,
    pub validation: usize,
}

/// Metadata for one output class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub class_index: usize,
    pub plant: String,
    /// Disease name, or `"Healthy"`.
    pub condition: String,
    pub healthy: bool,
    /// Folder name in the class-per-directory dataset layout.
    pub directory_name: String,
    pub plant_emoji: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_counts: Option<ReferenceCounts>,
}

impl ClassInfo {
    /// "Plant Condition", e.g. `Tomato Late blight`.
    pub fn display_name(&self) -> String {
        format!("{} {}", self.plant, self.condition)
    }
}

/// The 38 classes shipped with the crate, in output-index order.
pub fn reference_classes() -> Vec<ClassInfo> {
    let classes: Vec<ClassInfo> =
        serde_json::from_str(REFERENCE_CLASSES_JSON).expect("embedded class table is valid JSON");
    debug_assert!(validate_reference(&classes).is_ok());
    classes
}

/// Load a class metadata file (JSON array of [`ClassInfo`]).
pub fn load_classes(path: &Path) -> Result<Vec<ClassInfo>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let classes: Vec<ClassInfo> = serde_json::from_str(&text)?;
    validate_classes(&classes)?;
    Ok(classes)
}

/// Indices must run `0..n` in order and directory names must be unique.
pub fn validate_classes(classes: &[ClassInfo]) -> Result<()> {
    if classes.is_empty() {
        return Err(Error::arg("class list is empty"));
    }
    for (i, c) in classes.iter().enumerate() {
        if c.class_index != i {
            return Err(Error::arg(format!(
                "class record {i} has class_index {}",
                c.class_index
            )));
        }
    }
    let dirs: BTreeSet<String> = classes
        .iter()
        .map(|c| c.directory_name.to_lowercase())
        .collect();
    if dirs.len() != classes.len() {
        return Err(Error::arg("duplicate class directory names"));
    }
    Ok(())
}

/// Full check for a 38-class table: 12 healthy records over 14 plants.
pub fn validate_reference(classes: &[ClassInfo]) -> Result<()> {
    validate_classes(classes)?;
    if classes.len() != CLASS_COUNT {
        return Err(Error::arg(format!(
            "expected {CLASS_COUNT} classes, got {}",
            classes.len()
        )));
    }
    let healthy = classes.iter().filter(|c| c.healthy).count();
    if healthy != HEALTHY_CLASS_COUNT {
        return Err(Error::arg(format!(
            "expected {HEALTHY_CLASS_COUNT} healthy classes, got {healthy}"
        )));
    }
    let plants: BTreeSet<&str> = classes.iter().map(|c| c.plant.as_str()).collect();
    if plants.len() != PLANT_COUNT {
        return Err(Error::arg(format!(
            "expected {PLANT_COUNT} plants, got {}",
            plants.len()
        )));
    }
    if let Some(c) = classes
        .iter()
        .find(|c| c.healthy != (c.condition == "Healthy"))
    {
        return Err(Error::arg(format!(
            "class {} has inconsistent healthy flag",
            c.class_index
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_table_shape() {
        let classes = reference_classes();
        validate_reference(&classes).unwrap();
        assert_eq!(classes[0].display_name(), "Apple Apple Scab");
        assert_eq!(
            classes[0].reference_counts,
            Some(ReferenceCounts {
                train: 2016,
                validation: 504
            })
        );
        let total: usize = classes
            .iter()
            .map(|c| {
                let r = c.reference_counts.unwrap();
                r.train + r.validation
            })
            .sum();
        assert_eq!(total, 87_867);
    }

    #[test]
    fn reference_split_is_four_to_one() {
        for c in reference_classes() {
            let r = c.reference_counts.unwrap();
            let n = r.train + r.validation;
            assert_eq!(
                r.train,
                (0.8 * n as f64).round() as usize,
                "{}",
                c.display_name()
            );
        }
    }

    #[test]
    fn rejects_bad_tables() {
        let mut classes = reference_classes();
        classes.swap(0, 1);
        assert!(validate_classes(&classes).is_err());
        let mut classes = reference_classes();
        classes[3].healthy = false;
        assert!(validate_reference(&classes).is_err());
        assert!(validate_reference(&reference_classes()[..4]).is_err());
        assert!(validate_classes(&reference_classes()[..4]).is_ok());
    }
}
