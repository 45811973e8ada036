#![allow(dead_code)]

pub mod oracle;

use comodeler_core::synth::{self, FixtureSpec};
use comodeler_core::{LabelId, ProjectId, RgbImage, Store};

/// Creates a project with the given classes and `per_class` noisy training
/// images each. Returns label ids in class order.
pub fn seeded_project(
    store: &Store,
    name: &str,
    classes: &[(&str, FixtureSpec)],
    per_class: usize,
    seed: u64,
) -> (ProjectId, Vec<LabelId>) {
    let p = store.create_project(name).unwrap().id;
    let mut labels = Vec::new();
    for (i, (label, spec)) in classes.iter().enumerate() {
        let l = store.add_label(p, label, "fixture").unwrap();
        for img in synth::generate(spec, per_class, 48, 12.0, seed + i as u64) {
            store.add_sample(p, l, &img.encode_png(), "fixture", None).unwrap();
        }
        labels.push(l);
    }
    (p, labels)
}

pub fn png(img: &RgbImage) -> Vec<u8> {
    img.encode_png()
}

pub const RED: [u8; 3] = [230, 20, 20];
pub const GREEN: [u8; 3] = [20, 200, 40];
pub const BLUE: [u8; 3] = [30, 40, 220];

pub mod workload {
    use comodeler_core::event::{EventDraft, EventPayload};
    use comodeler_core::sync::Replica;
    use comodeler_core::{synth, BlobHash, ProjectState, Store};
    use rand::seq::IteratorRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub struct Convergence {
        pub accepted: usize,
        pub server: String,
        pub clients: Vec<String>,
        /// A client that only joins after all edits and replays from zero.
        pub late: String,
    }

    /// `clients` replicas each edit from their own view and sync at random
    /// moments; afterwards everyone syncs to quiescence.
    pub fn converge(seed: u64, clients: usize, edits: usize) -> Convergence {
        let store = Store::in_memory();
        let p = store.create_project("shared").unwrap().id;
        let images: Vec<BlobHash> = (0..5)
            .map(|i| store.put_image(&synth::solid_png(4 + i, [i as u8 * 20, 90, 200])).unwrap())
            .collect();
        let meta = store.project_meta(p).unwrap();
        let mut replicas: Vec<Replica> = (0..clients).map(|_| Replica::new(&meta)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut accepted = 0;
        for _ in 0..edits {
            let c = rng.random_range(0..clients);
            if rng.random_bool(0.3) {
                replicas[c].sync(&store).unwrap();
            }
            let draft = random_edit(&replicas[c].state, &format!("client-{c}"), &images, &mut rng);
            if store.apply_event(p, draft).is_ok() {
                accepted += 1;
            }
        }
        for r in &mut replicas {
            r.sync(&store).unwrap();
            assert_eq!(r.sync(&store).unwrap(), 0);
        }
        let mut late = Replica::new(&meta);
        late.sync(&store).unwrap();
        Convergence {
            accepted,
            server: store.project(p).unwrap().state_hash(),
            clients: replicas.iter().map(Replica::state_hash).collect(),
            late: late.state_hash(),
        }
    }

    /// A random edit a client would make from its (possibly stale) view.
    /// Stale edits may be rejected by the server; that is part of the test.
    pub fn random_edit(view: &ProjectState, author: &str, images: &[BlobHash], rng: &mut impl Rng) -> EventDraft {
        let live_labels: Vec<_> = view.live_labels().map(|l| l.id).collect();
        let live_samples: Vec<_> = view.live_samples().map(|s| s.id).collect();
        let live_tests: Vec<_> = view.live_test_samples().map(|t| t.id).collect();
        let payload = loop {
            let roll = rng.random_range(0..100);
            let p = match roll {
                0..=14 => Some(EventPayload::LabelAdded { name: format!("label-{}", rng.random_range(0..12)) }),
                15..=19 => live_labels.iter().choose(rng).map(|&label_id| EventPayload::LabelRenamed {
                    label_id,
                    name: format!("renamed-{}", rng.random_range(0..12)),
                }),
                20..=23 => live_labels.iter().choose(rng).map(|&label_id| EventPayload::LabelDeleted { label_id }),
                24..=64 => live_labels.iter().choose(rng).map(|&label_id| EventPayload::SampleAdded {
                    label_id,
                    image_ref: images[rng.random_range(0..images.len())].clone(),
                    dedupe_key: None,
                }),
                65..=79 => live_samples.iter().choose(rng).map(|&sample_id| EventPayload::SampleDeleted { sample_id }),
                80..=89 => Some(EventPayload::TestSampleAdded {
                    image_ref: images[rng.random_range(0..images.len())].clone(),
                    expected_label_id: live_labels.iter().choose(rng).copied(),
                    result: None,
                    model_version: None,
                }),
                90..=95 => live_tests.iter().choose(rng).map(|&test_sample_id| EventPayload::ExpectedLabelSet {
                    test_sample_id,
                    label_id: live_labels.iter().choose(rng).copied(),
                }),
                _ => live_tests
                    .iter()
                    .choose(rng)
                    .map(|&test_sample_id| EventPayload::TestSampleDeleted { test_sample_id }),
            };
            if let Some(p) = p {
                break p;
            }
        };
        EventDraft::new(author, payload)
    }
}
