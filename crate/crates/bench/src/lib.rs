//! Fixtures shared by the benchmarks.

use comodeler_core::synth;
use comodeler_core::{extract_features, FeatureVector, LabelId, ModelVersion, TrainConfig};
use comodeler_core::trainer::fit_head;

/// `per_class` noisy renders of each of the four fixture classes, as PNG.
pub fn dataset(per_class: usize, size: usize) -> Vec<(usize, Vec<u8>)> {
    synth::four_classes()
        .iter()
        .enumerate()
        .flat_map(|(c, (_, spec))| {
            synth::generate(spec, per_class, size, 12.0, c as u64).into_iter().map(move |img| (c, img.encode_png()))
        })
        .collect()
}

pub fn features(data: &[(usize, Vec<u8>)]) -> Vec<(usize, FeatureVector)> {
    data.iter().map(|(c, png)| (*c, extract_features(png).expect("fixture decodes"))).collect()
}

pub fn train(feats: &[(usize, FeatureVector)], config: &TrainConfig) -> ModelVersion {
    let rows: Vec<&[f64]> = feats.iter().map(|(_, f)| f.as_slice()).collect();
    let classes: Vec<usize> = feats.iter().map(|(c, _)| *c).collect();
    let labels = (1..=4).map(LabelId).collect();
    fit_head(&rows, &classes, 4, config).into_model(1, labels, 0, rows.len())
}
