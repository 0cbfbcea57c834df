//! Models and uploads shared by the app test targets.
#![allow(dead_code)]

use std::sync::Arc;

use axum::Router;
use plantdoc::service::{router, AppState, DEFAULT_MAX_UPLOAD_BYTES, DEFAULT_TOP_K};
use plantdoc_core::data::{class_palette, encode_png, reference_classes, render_sample};
use plantdoc_core::model::{ArchConfig, FrozenModel, Network};
use plantdoc_core::SeededRng;

/// Randomly initialised compact network over the 38 reference classes.
pub fn compact_model(seed: u64) -> FrozenModel {
    let net = Network::build(&ArchConfig::compact(38), &mut SeededRng::new(seed)).unwrap();
    FrozenModel::new(&net, &reference_classes()).unwrap()
}

/// A model whose classifier bias makes `class` win on any input.
pub fn rigged_model(class: usize) -> FrozenModel {
    let mut net = Network::build(&ArchConfig::compact(38), &mut SeededRng::new(1)).unwrap();
    let mut params = net.parameters_mut();
    let bias = params.last_mut().unwrap();
    bias.data_mut()[class] = 1e4;
    FrozenModel::new(&net, &reference_classes()).unwrap()
}

/// PNG bytes of a synthetic leaf of `class`.
pub fn leaf_png(class: usize, side: usize, seed: u64) -> Vec<u8> {
    let classes = reference_classes();
    let palette = class_palette(classes.len());
    let img = render_sample(
        &classes[class],
        palette[class],
        side,
        &mut SeededRng::new(seed),
    );
    encode_png(&img).unwrap()
}

pub fn app(model: Option<FrozenModel>) -> Router {
    router(
        AppState::new(model.map(Arc::new), DEFAULT_TOP_K),
        DEFAULT_MAX_UPLOAD_BYTES,
        None,
    )
}
