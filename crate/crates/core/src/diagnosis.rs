//! Turning class probabilities into a user-facing diagnosis.

use serde::{Deserialize, Serialize};

use crate::data::{decode_resize_bytes, normalize, ClassInfo};
use crate::error::{Error, Result};
use crate::layers::argmax;
use crate::model::FrozenModel;

pub const HEALTHY_EMOJI: &str = "🌿";
pub const DISEASED_EMOJI: &str = "🦠";
pub const FALLBACK_PLANT_EMOJI: &str = "🌱";

const PLANT_EMOJI: [(&str, &str); 11] = [
    ("Tomato", "🍅"),
    ("Apple", "🍏"),
    ("Corn", "🌽"),
    ("Grape", "🍇"),
    ("Strawberry", "🍓"),
    ("Peach", "🍑"),
    ("Orange", "🍊"),
    ("Potato", "🥔"),
    ("Bell Pepper", "🫑"),
    ("Blueberry", "🫐"),
    ("Cherry", "🍒"),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatusColor {
    Green,
    Red,
}

impl StatusColor {
    pub fn as_str(self) -> &'static str {
        match self {
            StatusColor::Green => "green",
            StatusColor::Red => "red",
        }
    }
}

pub fn plant_emoji(plant: &str) -> &'static str {
    PLANT_EMOJI
        .iter()
        .find(|(name, _)| name.eq_ignore_ascii_case(plant))
        .map(|(_, e)| *e)
        .unwrap_or(FALLBACK_PLANT_EMOJI)
}

/// `(plant emoji, status emoji, status colour)` for a class.
pub fn class_display(info: &ClassInfo) -> (&'static str, &'static str, StatusColor) {
    let (status, color) = if info.healthy {
        (HEALTHY_EMOJI, StatusColor::Green)
    } else {
        (DISEASED_EMOJI, StatusColor::Red)
    };
    (plant_emoji(&info.plant), status, color)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedClass {
    pub class_index: usize,
    pub label: String,
    pub probability: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class_index: usize,
    pub plant: String,
    pub condition: String,
    pub healthy: bool,
    /// Probability of the top class.
    pub confidence: f32,
    pub plant_emoji: String,
    pub status_emoji: String,
    pub status_color: StatusColor,
    /// Most probable classes, descending.
    pub top_k: Vec<RankedClass>,
    /// One entry per class, in class-index order.
    pub probabilities: Vec<f32>,
}

/// Build a diagnosis from a full probability vector.
pub fn diagnose(probabilities: &[f32], classes: &[ClassInfo], top_k: usize) -> Result<Prediction> {
    if probabilities.len() != classes.len() || classes.is_empty() {
        return Err(Error::arg(format!(
            "{} probabilities for {} classes",
            probabilities.len(),
            classes.len()
        )));
    }
    let best = argmax(probabilities);
    let info = &classes[best];
    let (plant_emoji, status_emoji, status_color) = class_display(info);

    let mut order: Vec<usize> = (0..probabilities.len()).collect();
    // stable sort keeps the lower index first among equal probabilities
    order.sort_by(|&a, &b| probabilities[b].total_cmp(&probabilities[a]));
    let top_k = order
        .into_iter()
        .take(top_k.max(1))
        .map(|i| RankedClass {
            class_index: i,
            label: classes[i].display_name(),
            probability: probabilities[i],
        })
        .collect();

    Ok(Prediction {
        class_index: best,
        plant: info.plant.clone(),
        condition: info.condition.clone(),
        healthy: info.healthy,
        confidence: probabilities[best],
        plant_emoji: plant_emoji.to_string(),
        status_emoji: status_emoji.to_string(),
        status_color,
        top_k,
        probabilities: probabilities.to_vec(),
    })
}

/// Decode, resize and normalize an encoded PNG/JPEG, then classify it.
pub fn predict_bytes(model: &FrozenModel, bytes: &[u8], top_k: usize) -> Result<Prediction> {
    let side = model.input_shape()[0];
    let image = normalize(&decode_resize_bytes(bytes, side)?);
    let probs = model.predict_one(&image)?;
    diagnose(&probs, model.classes(), top_k)
}
