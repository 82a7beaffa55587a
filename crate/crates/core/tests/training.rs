//! Training-loop behaviour on tiny models: parameter gradients of every
//! objective, teacher isolation, the alpha = 0 reduction, determinism and
//! best-epoch restoration.

use distill_vad::distill::losses::{combined_loss, FeatureRegressor, StudentTerms, TeacherTerms};
use distill_vad::distill::{train, train_cached, DistillConfig, Method, Samples, TeacherCache};
use distill_vad::tensor::{Tape, Tensor};
use distill_vad::zoo::{defaults, weights, Model, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const METHODS: [Method; 3] = [Method::Response, Method::Feature, Method::Relational];

fn small_config(seed_name: &str) -> ModelConfig {
    let mut cfg = defaults::student_config(4).unwrap();
    cfg.input_shape = [1, 32, 32];
    cfg.name = seed_name.into();
    cfg
}

/// Positives carry a bright horizontal band at a random height.
fn samples(n: usize, seed: u64) -> Samples {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * 1024);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let positive = i % 2 == 0;
        let row = rng.gen_range(4..28);
        for r in 0..32 {
            for _ in 0..32 {
                let band = if positive && (r as i32 - row).abs() <= 1 { 0.7 } else { 0.0 };
                data.push(rng.gen_range(0.0..0.3) + band);
            }
        }
        labels.push(if positive { 1.0 } else { 0.0 });
    }
    Samples::new(Tensor::new(vec![n, 1, 32, 32], data).unwrap(), labels).unwrap()
}

fn cfg(method: Method, alpha: f64, seed: u64) -> DistillConfig {
    DistillConfig { method, alpha, batch_size: 8, max_epochs: 2, seed, ..DistillConfig::default() }
}

#[test]
fn parameter_gradients_match_finite_differences() {
    let config = small_config("student");
    let mut model: Model<f64> = Model::build(&config, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    // Nonzero shifts keep all-zero patches off the ReLU kink, where central
    // differences see half the slope.
    for p in model.params_mut().iter_mut().filter(|p| p.name.ends_with("beta")) {
        p.tensor.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(0.05..0.2));
    }
    let n = 4;
    let x = Tensor::from_fn(vec![n, 1, 32, 32], |_| rng.gen_range(0.0..1.0));
    let labels = [1.0, 0.0, 0.0, 1.0];
    let t_logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let t_emb = Tensor::from_fn(vec![n, 6], |_| rng.gen_range(-1.0..1.0));
    let guide = config.layer_index("bneck4").unwrap();
    let guide_c = model.layer_shapes()[guide].dims()[0];
    let t_hint = Tensor::from_fn(vec![n, 5, 2, 2], |_| rng.gen_range(-1.0..1.0));
    let regressor = FeatureRegressor::<f64>::new(guide_c, 5, 2);

    for method in METHODS {
        let dcfg = DistillConfig { method, ..DistillConfig::default() };
        let loss_of = |m: &Model<f64>, tape: &Tape<f64>| -> f64 {
            let fwd = m.forward_eval(tape, tape.constant(&x)).unwrap();
            let student = StudentTerms { logits: fwd.logits, embedding: fwd.embedding, guide: Some(fwd.outputs[guide]) };
            let teacher = TeacherTerms { logits: &t_logits, embedding: &t_emb, hint: Some(&t_hint) };
            combined_loss(method, &student, &teacher, &labels, &dcfg, Some(&regressor)).unwrap().item()
        };
        let tape = Tape::new();
        let fwd = model.forward_eval(&tape, tape.constant(&x)).unwrap();
        let student = StudentTerms { logits: fwd.logits, embedding: fwd.embedding, guide: Some(fwd.outputs[guide]) };
        let teacher = TeacherTerms { logits: &t_logits, embedding: &t_emb, hint: Some(&t_hint) };
        let loss = combined_loss(method, &student, &teacher, &labels, &dcfg, Some(&regressor)).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(!grads.touches(regressor.params()) || method == Method::Feature);

        let ids: Vec<_> = model.params().iter().map(|(id, p)| (id, p.tensor.numel())).collect();
        let (mut diff, mut norm) = (0.0f64, 0.0f64);
        let mut checked = 0;
        for (k, &(id, numel)) in ids.iter().enumerate() {
            let analytic = grads.param(model.params(), id).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; numel]);
            for j in [0, numel / 2, numel - 1].into_iter().skip(k % 2) {
                let h = 1e-6;
                let orig = model.params().get(id).data()[j];
                model.params_mut().get_mut(id).data_mut()[j] = orig + h;
                let up = loss_of(&model, &Tape::no_grad());
                model.params_mut().get_mut(id).data_mut()[j] = orig - h;
                let down = loss_of(&model, &Tape::no_grad());
                model.params_mut().get_mut(id).data_mut()[j] = orig;
                let numeric = (up - down) / (2.0 * h);
                diff += (analytic[j] - numeric).powi(2);
                norm += analytic[j].powi(2) + numeric.powi(2);
                checked += 1;
            }
        }
        let rel = diff.sqrt() / norm.sqrt().max(1e-12);
        assert!(checked >= 20);
        assert!(rel < 1e-4, "{method:?}: relative error {rel:e} over {checked} coordinates");
    }
}

#[test]
fn alpha_zero_reduces_to_the_baseline() {
    let (tr, va) = (samples(24, 1), samples(8, 2));
    let teacher: Model<f32> = Model::build(&small_config("teacher_stand_in"), 11).unwrap();
    let mut baseline: Model<f32> = Model::build(&small_config("student"), 3).unwrap();
    let base_report = train(&mut baseline, &tr, &va, &cfg(Method::Response, 0.0, 3), None, &mut |_| {}).unwrap();
    for method in METHODS {
        let mut distilled: Model<f32> = Model::build(&small_config("student"), 3).unwrap();
        let report = train(&mut distilled, &tr, &va, &cfg(method, 0.0, 3), Some(&teacher), &mut |_| {}).unwrap();
        assert_eq!(weights::encode(&distilled), weights::encode(&baseline), "{method:?}");
        let vals = |r: &distill_vad::distill::TrainReport| r.log.iter().map(|e| e.val_loss).collect::<Vec<_>>();
        assert_eq!(vals(&report), vals(&base_report));
    }
}

#[test]
fn teacher_is_never_updated() {
    let (tr, va) = (samples(24, 5), samples(8, 6));
    let teacher: Model<f32> = Model::build(&small_config("teacher_stand_in"), 12).unwrap();
    let before = weights::encode(&teacher);
    for method in METHODS {
        let mut student: Model<f32> = Model::build(&small_config("student"), 4).unwrap();
        let initial = weights::encode(&student);
        train(&mut student, &tr, &va, &cfg(method, 0.2, 4), Some(&teacher), &mut |_| {}).unwrap();
        assert_ne!(weights::encode(&student), initial);
        assert_eq!(weights::encode(&teacher), before, "{method:?}");
    }
}

#[test]
fn cached_teacher_matches_recomputation() {
    let (tr, va) = (samples(24, 7), samples(8, 8));
    let teacher: Model<f32> = Model::build(&small_config("teacher_stand_in"), 13).unwrap();
    for method in METHODS {
        let c = cfg(method, 0.2, 5);
        let template: Model<f32> = Model::build(&small_config("student"), 5).unwrap();
        let cache = TeacherCache::for_student(&teacher, &template, &tr, &c).unwrap();
        let (mut a, mut b) = (template.clone(), template);
        let ra = train(&mut a, &tr, &va, &c, Some(&teacher), &mut |_| {}).unwrap();
        let rb = train_cached(&mut b, &tr, &va, &c, &teacher, &cache, &mut |_| {}).unwrap();
        assert_eq!(weights::encode(&a), weights::encode(&b), "{method:?}");
        let losses = |r: &distill_vad::distill::TrainReport| r.log.iter().map(|e| (e.train_loss, e.val_loss)).collect::<Vec<_>>();
        assert_eq!(losses(&ra), losses(&rb));
        assert_eq!(ra.best_epoch, rb.best_epoch);
    }
}

#[test]
fn same_seed_same_bytes() {
    let (tr, va) = (samples(24, 9), samples(8, 10));
    let teacher: Model<f32> = Model::build(&small_config("teacher_stand_in"), 14).unwrap();
    let run = |seed: u64| {
        let mut m: Model<f32> = Model::build(&small_config("student"), seed).unwrap();
        train(&mut m, &tr, &va, &cfg(Method::Relational, 0.2, seed), Some(&teacher), &mut |_| {}).unwrap();
        weights::encode(&m)
    };
    assert_eq!(run(21), run(21));
    assert_ne!(run(21), run(22));
}

#[test]
fn final_weights_are_the_best_epoch() {
    let (tr, va) = (samples(32, 11), samples(16, 12));
    let mut m: Model<f32> = Model::build(&small_config("student"), 6).unwrap();
    let c = DistillConfig { max_epochs: 6, patience: 2, batch_size: 8, lr: 0.01, seed: 6, ..DistillConfig::default() };
    let report = train(&mut m, &tr, &va, &c, None, &mut |_| {}).unwrap();
    assert!(report.log.len() <= 6);
    let best = report.log.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(report.best_val_loss, best);
    assert_eq!(report.log[report.best_epoch - 1].val_loss, best);

    // hard-label validation loss of the returned model, recomputed here
    let tape = Tape::no_grad();
    let logits = m.forward_eval(&tape, tape.constant(va.features())).unwrap().logits.value();
    let loss: f64 = logits
        .data()
        .iter()
        .zip(va.labels())
        .map(|(&z, &y)| {
            let (z, y) = (z as f64, y as f64);
            z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
        })
        .sum::<f64>()
        / va.len() as f64;
    assert!((loss - best).abs() < 1e-5, "{loss} vs {best}");
}
