use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use semtex_core::app::dataset::{generate_synthetic_dataset, toy_vehicle, SynthSpec};
use semtex_core::app::pipeline::{
    evaluate, sample_style_codes, score, style_codes, unconditional_generate, view_seed, Mode,
};
use semtex_core::app::run::parametrize_mesh;
use semtex_core::app::{conditional_generate, generate_textures, Model, PipelineConfig, StyleSource};
use semtex_core::generator::GeneratorConfig;
use semtex_core::geometry::SegmentationMapSet;
use semtex_core::metrics::FidExtractor;
use semtex_core::training::{TrainConfig, TrainState};
use semtex_core::Error;

fn config() -> PipelineConfig {
    PipelineConfig {
        generator: GeneratorConfig {
            resolution: 16,
            latent_dim: 8,
            split_index: 2,
            channel_base: 64,
            channel_max: 8,
            num_views: 6,
            mapping_layers: 2,
            mapping_lr_multiplier: 0.01,
        },
        ..PipelineConfig::default()
    }
}

fn model() -> &'static Model {
    static M: OnceLock<Model> = OnceLock::new();
    M.get_or_init(|| {
        let cfg = config();
        let mut enc = cfg.encoder_config();
        enc.channels = 4;
        let tc = TrainConfig {
            batch_size: 2,
            max_steps: 1,
            ..TrainConfig::default()
        };
        let ds = generate_synthetic_dataset(
            &SynthSpec {
                count: 4,
                resolution: 16,
                num_classes: 4,
                num_meshes: 0,
            },
            1,
        )
        .unwrap();
        let nets = semtex_core::training::LossNets::toy();
        let mut s = TrainState::stage1(&cfg.generator, &tc).unwrap();
        s.run(&ds.images, None, &nets).unwrap();
        let mut s = s.stage2(&enc, &tc).unwrap();
        s.run(&ds.images, None, &nets).unwrap();
        let mut s = s.stage3(&enc, &tc).unwrap();
        s.run(&ds.images, Some(&ds.labels), &nets).unwrap();
        Model::from_state(s).unwrap()
    })
}

fn vehicle() -> semtex_core::app::run::Parametrized {
    let mesh = toy_vehicle(&mut ChaCha8Rng::seed_from_u64(3), 4).unwrap();
    parametrize_mesh(&config(), mesh).unwrap()
}

fn style_image() -> semtex_core::image::RgbImage {
    generate_synthetic_dataset(
        &SynthSpec {
            count: 1,
            resolution: 16,
            num_classes: 4,
            num_meshes: 0,
        },
        9,
    )
    .unwrap()
    .images
    .remove(0)
}

#[test]
fn style_codes_are_bitwise_shared_across_views() {
    let p = vehicle();
    let img = style_image();
    for source in [StyleSource::Image(&img), StyleSource::Random(5)] {
        let g = generate_textures(model(), &p.segs, source, 11).unwrap();
        assert_eq!(g.style_bits_per_view.len(), 6);
        let expect: Vec<u32> = g.style_codes.data().iter().map(|v| v.to_bits()).collect();
        for bits in &g.style_bits_per_view {
            assert_eq!(bits, &expect);
        }
    }
}

#[test]
fn modes_differ_only_in_style_source() {
    let p = vehicle();
    let img = style_image();
    let from_image = style_codes(model(), StyleSource::Image(&img)).unwrap();
    let cond = generate_textures(model(), &p.segs, StyleSource::Image(&img), 2).unwrap();
    let injected = generate_textures(model(), &p.segs, StyleSource::Codes(&from_image), 2).unwrap();
    assert_eq!(cond.textures, injected.textures);

    let random = style_codes(model(), StyleSource::Random(8)).unwrap();
    let uncond = generate_textures(model(), &p.segs, StyleSource::Random(8), 2).unwrap();
    let injected = generate_textures(model(), &p.segs, StyleSource::Codes(&random), 2).unwrap();
    assert_eq!(uncond.textures, injected.textures);
}

#[test]
fn generation_is_deterministic_and_seed_sensitive() {
    let p = vehicle();
    let dir = tempfile::tempdir().unwrap();
    let (a, files) = unconditional_generate(model(), &p.mesh, &p.atlas, &p.segs, 4, &dir.path().join("a"), 32).unwrap();
    let (b, _) = unconditional_generate(model(), &p.mesh, &p.atlas, &p.segs, 4, &dir.path().join("b"), 32).unwrap();
    let (c, _) = unconditional_generate(model(), &p.mesh, &p.atlas, &p.segs, 5, &dir.path().join("c"), 32).unwrap();
    assert_eq!(a.textures, b.textures);
    for name in ["textured.obj", "textured.mtl", "textured.png"] {
        let x = std::fs::read(dir.path().join("a").join(name)).unwrap();
        let y = std::fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
    let dist: f32 = a.textures.maps.iter().zip(&c.textures.maps).map(|(x, y)| x.max_abs_diff(y)).sum();
    assert!(dist > 0.0);
    assert_eq!(files.textures.len(), 6);
    assert_eq!(files.renders.len(), 6);
    assert!(files.mesh.obj.exists() && files.mesh.mtl.exists() && files.mesh.texture.exists());

    let (d, _) = conditional_generate(model(), &p.mesh, &p.atlas, &p.segs, &style_image(), 4, &dir.path().join("d"), 32).unwrap();
    assert_eq!(d.textures.len(), 6);
}

#[test]
fn view_count_mismatch_is_rejected() {
    let p = vehicle();
    let five = SegmentationMapSet::new(p.segs.maps[..5].to_vec(), 4).unwrap();
    match generate_textures(model(), &five, StyleSource::Random(0), 0) {
        Err(Error::ViewCount { expected: 6, got: 5 }) => {}
        other => panic!("expected view-count error, got {other:?}"),
    }
}

#[test]
fn random_style_codes_are_standard_normal() {
    let (mut sum, mut sq, mut n) = (0.0f64, 0.0f64, 0usize);
    for seed in 0..1250u64 {
        for v in sample_style_codes(1, 8, seed).data() {
            sum += *v as f64;
            sq += (*v as f64).powi(2);
            n += 1;
        }
    }
    assert_eq!(n, 10_000);
    let mean = sum / n as f64;
    let var = sq / n as f64 - mean * mean;
    assert!(mean.abs() < 0.05 && (var - 1.0).abs() < 0.1, "mean {mean} var {var}");
}

#[test]
fn view_seeds_are_distinct() {
    let seeds: std::collections::HashSet<u64> = (0..6).map(|i| view_seed(7, i)).collect();
    assert_eq!(seeds.len(), 6);
    assert_eq!(view_seed(7, 3), view_seed(7, 3));
}

#[test]
fn report_schema_and_self_comparison() {
    let ds = generate_synthetic_dataset(
        &SynthSpec {
            count: 12,
            resolution: 16,
            num_classes: 4,
            num_meshes: 0,
        },
        4,
    )
    .unwrap();
    let ext = FidExtractor::toy(0);
    let own = score(&ds.images, &ds.images, None, &ext).unwrap();
    assert!(own.fid < 1e-6, "fid {}", own.fid);

    let a = evaluate(model(), &ds.images, &ds.labels, Mode::Conditional, 3, true, &ext).unwrap();
    let b = evaluate(model(), &ds.images, &ds.labels, Mode::Conditional, 3, true, &ext).unwrap();
    assert_eq!(a.to_text().unwrap(), b.to_text().unwrap());
    let table: toml::Table = a.to_text().unwrap().parse().unwrap();
    let mut keys: Vec<&str> = table.keys().map(String::as_str).collect();
    keys.sort();
    assert_eq!(keys, ["extractor_id", "fid", "kid", "miou", "n_fake", "n_real", "pixel_accuracy"]);
    let u = evaluate(model(), &ds.images, &ds.labels, Mode::Unconditional, 3, false, &ext).unwrap();
    assert!(u.miou.is_none() && u.pixel_accuracy.is_none());
    assert!(evaluate(model(), &[], &[], Mode::Conditional, 3, true, &ext).is_err());
}
