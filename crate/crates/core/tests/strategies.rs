mod common;

use common::oracle::{relative_error, Instance, FD_EPS};
use fedckd::data::Dataset;
use fedckd::engine::ClientState;
use fedckd::nn::{
    ce_loss, combined_loss_backward, predict, temp_softmax, DenseMatrix, DistillConfig, KlDirection, Layer,
    ModelParams, SgdState,
};
use fedckd::strategies::{
    local_update, local_update_fedavg, local_update_fedckd, local_update_fedprox, local_update_pfedsd,
    AnnealSchedule, LocalTraining, StrategyKind,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn training(epochs: usize, batch_size: usize) -> LocalTraining {
    LocalTraining {
        epochs,
        batch_size,
        kl_direction: KlDirection::TeacherStudent,
        tau_squared: false,
    }
}

fn client(model: &ModelParams, lr: f64, momentum: f64, wd: f64, n: usize) -> ClientState {
    let opt = SgdState::new(model, lr, momentum, wd).unwrap();
    ClientState::new(0, model.clone(), opt, (0..n).collect(), vec![])
}

fn toy_dataset(rng: &mut ChaCha8Rng, n: usize, dim: usize, classes: usize) -> Dataset {
    let data = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels = (0..n).map(|i| i % classes).collect();
    Dataset::new(DenseMatrix::new(n, dim, data).unwrap(), labels, classes).unwrap()
}

fn mean_ce(model: &ModelParams, ds: &Dataset) -> f64 {
    let p = temp_softmax(&predict(model, ds.features()).unwrap(), 1.0).unwrap();
    ce_loss(&p, ds.labels()).unwrap()
}

fn all_kinds() -> Vec<StrategyKind> {
    vec![
        StrategyKind::FedAvg,
        StrategyKind::FedProx { mu: 0.1 },
        StrategyKind::PFedSd { lambda: 0.5, tau: 3.0 },
        StrategyKind::FedCkd {
            schedule: AnnealSchedule::new(0.5, 0.99, true).unwrap(),
            tau: 3.0,
            global_teacher: true,
            historical_teacher: true,
        },
    ]
}

#[test]
fn zero_learning_rate_leaves_model_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ds = toy_dataset(&mut rng, 12, 4, 3);
    let model = ModelParams::init(&[4, 5, 3], &mut rng).unwrap();
    let global = ModelParams::init(&[4, 5, 3], &mut rng).unwrap();
    for kind in all_kinds() {
        let mut c = client(&model, 0.0, 0.9, 1e-5, ds.len());
        c.historical_model = Some(global.clone());
        local_update(&kind, &mut c, &ds, &global, 3, &training(2, 5), &mut rng).unwrap();
        assert_eq!(c.local_model, model, "{}", kind.name());
    }
}

#[test]
fn single_step_matches_hand_gradient() {
    // Linear model z = xW + b on one sample; dL/dz = softmax(z) - onehot.
    let w = DenseMatrix::from_rows(&[vec![0.2, -0.1, 0.4], vec![-0.3, 0.5, 0.1]]).unwrap();
    let b = DenseMatrix::from_rows(&[vec![0.05, 0.0, -0.05]]).unwrap();
    let model = ModelParams::new(vec![Layer { weight: w, bias: b }]).unwrap();
    let x = [1.5, -0.5];
    let y = 2;
    let ds = Dataset::new(DenseMatrix::from_rows(&[x.to_vec()]).unwrap(), vec![y], 3).unwrap();

    let z: Vec<f64> = (0..3)
        .map(|j| {
            let bias = [0.05, 0.0, -0.05][j];
            let w = [[0.2, -0.1, 0.4], [-0.3, 0.5, 0.1]];
            bias + x[0] * w[0][j] + x[1] * w[1][j]
        })
        .collect();
    let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
    let s: f64 = e.iter().sum();
    let d: Vec<f64> = (0..3).map(|j| e[j] / s - if j == y { 1.0 } else { 0.0 }).collect();

    let lr = 0.1;
    let mut c = client(&model, lr, 0.0, 0.0, 1);
    local_update_fedavg(&mut c, &ds, &training(1, 1), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let got = c.local_model.flatten();
    let before = model.flatten();
    let mut expected = before.clone();
    for i in 0..2 {
        for j in 0..3 {
            expected[i * 3 + j] -= lr * x[i] * d[j];
        }
    }
    for j in 0..3 {
        expected[6 + j] -= lr * d[j];
    }
    for (g, e) in got.iter().zip(&expected) {
        assert!((g - e).abs() < 1e-14, "{got:?} vs {expected:?}");
    }
}

#[test]
fn full_batch_descent_on_linear_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let ds = toy_dataset(&mut rng, 20, 3, 4);
    let model = ModelParams::init(&[3, 4], &mut rng).unwrap();
    let before = mean_ce(&model, &ds);
    let mut c = client(&model, 0.1, 0.0, 0.0, ds.len());
    local_update_fedavg(&mut c, &ds, &training(10, ds.len()), &mut rng).unwrap();
    let after = mean_ce(&c.local_model, &ds);
    assert!(after <= before, "{after} > {before}");
}

#[test]
fn huge_proximal_weight_pins_model_to_global() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ds = toy_dataset(&mut rng, 16, 4, 3);
    let global = ModelParams::init(&[4, 6, 3], &mut rng).unwrap();
    let start = ModelParams::init(&[4, 6, 3], &mut rng).unwrap();
    let d0 = start.distance(&global).unwrap();
    let mut c = client(&start, 1e-6, 0.0, 0.0, ds.len());
    local_update_fedprox(&mut c, &ds, &global, 1e6, &training(3, 4), &mut rng).unwrap();
    let d1 = c.local_model.distance(&global).unwrap();
    assert!(d1 < 1e-4 * d0, "{d1} vs {d0}");
}

#[test]
fn proximal_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut checked = 0;
    while checked < 30 {
        let mut inst = Instance::random(&mut rng, 3, 8, 4);
        inst.distill.lambda = 0.0;
        if inst.non_smooth() {
            continue;
        }
        let shifted: Vec<f64> = inst.model.flatten().iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
        let global = inst.model.unflatten(&shifted).unwrap();
        let mu = 0.7;
        let wg = global.flatten();
        let prox = |flat: &[f64]| {
            let sq: f64 = flat.iter().zip(&wg).map(|(a, b)| (a - b) * (a - b)).sum();
            inst.oracle_loss(flat) + 0.5 * mu * sq
        };
        let base = inst.model.flatten();
        let numeric: Vec<f64> = (0..base.len())
            .map(|i| {
                let (mut p, mut m) = (base.clone(), base.clone());
                p[i] += FD_EPS;
                m[i] -= FD_EPS;
                (prox(&p) - prox(&m)) / (2.0 * FD_EPS)
            })
            .collect();

        // One full-batch plain SGD step recovers the gradient the update used.
        let n = inst.labels.len();
        let classes = inst.model.out_dim();
        let ds = Dataset::new(inst.batch.clone(), inst.labels.clone(), classes).unwrap();
        let lr = 0.5;
        let mut c = client(&inst.model, lr, 0.0, 0.0, n);
        local_update_fedprox(&mut c, &ds, &global, mu, &training(1, n), &mut rng).unwrap();
        let analytic: Vec<f64> = base.iter().zip(c.local_model.flatten()).map(|(w0, w1)| (w0 - w1) / lr).collect();
        let err = relative_error(&analytic, &numeric);
        assert!(err < 1e-4, "relative error {err:e}");
        checked += 1;
    }
}

#[test]
fn pfedsd_without_history_is_fedavg() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let ds = toy_dataset(&mut rng, 30, 5, 3);
    let model = ModelParams::init(&[5, 8, 3], &mut rng).unwrap();
    let mut a = client(&model, 0.05, 0.9, 1e-5, ds.len());
    let mut b = a.clone();
    let la = local_update_fedavg(&mut a, &ds, &training(3, 7), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let lb = local_update_pfedsd(&mut b, &ds, 0.5, 3.0, &training(3, 7), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(a.local_model, b.local_model);
    assert_eq!(la.map(f64::to_bits), lb.map(f64::to_bits));
}

#[test]
fn teachers_equal_to_student_leave_ce_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for direction in [KlDirection::TeacherStudent, KlDirection::StudentTeacher] {
        for _ in 0..10 {
            let inst = Instance::random(&mut rng, 3, 10, 4);
            let plain = DistillConfig::new(0.0, 1.0);
            let cfg = DistillConfig {
                lambda: 0.5,
                tau: 3.0,
                direction,
                tau_squared: false,
            };
            let m = &inst.model;
            let (_, ce) = combined_loss_backward(m, &inst.batch, &inst.labels, &[], &plain).unwrap();
            let (_, one) = combined_loss_backward(m, &inst.batch, &inst.labels, &[m], &cfg).unwrap();
            let (_, two) = combined_loss_backward(m, &inst.batch, &inst.labels, &[m, m], &cfg).unwrap();
            assert_eq!(ce, one);
            assert_eq!(ce, two);
        }
    }
}

#[test]
fn self_distillation_first_step_matches_fedavg_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let ds = toy_dataset(&mut rng, 10, 4, 3);
    let model = ModelParams::init(&[4, 6, 3], &mut rng).unwrap();
    let mut plain = client(&model, 0.1, 0.0, 0.0, ds.len());
    let mut sd = plain.clone();
    sd.historical_model = Some(model.clone());
    let mut ckd = sd.clone();
    let t = training(1, ds.len());
    local_update_fedavg(&mut plain, &ds, &t, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    local_update_pfedsd(&mut sd, &ds, 0.5, 3.0, &t, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    local_update_fedckd(&mut ckd, &ds, &model, 0.5, 3.0, true, true, &t, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert_eq!(plain.local_model, sd.local_model);
    assert_eq!(plain.local_model, ckd.local_model);
}

#[test]
fn fedckd_without_history_uses_global_teacher_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let ds = toy_dataset(&mut rng, 25, 4, 3);
    let global = ModelParams::init(&[4, 6, 3], &mut rng).unwrap();
    let stale = ModelParams::init(&[4, 6, 3], &mut rng).unwrap();
    let fresh = client(&global, 0.05, 0.9, 1e-5, ds.len());
    let mut bootstrap = fresh.clone();
    let mut global_only = fresh.clone();
    global_only.historical_model = Some(stale.clone());
    let t = training(2, 6);
    local_update_fedckd(&mut bootstrap, &ds, &global, 0.4, 3.0, true, true, &t, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    local_update_fedckd(&mut global_only, &ds, &global, 0.4, 3.0, true, false, &t, &mut ChaCha8Rng::seed_from_u64(8))
        .unwrap();
    assert_eq!(bootstrap.local_model, global_only.local_model);
    assert!(bootstrap.historical_model.is_none());
    assert_eq!(global_only.historical_model, Some(stale));
}

#[test]
fn zero_weights_degenerate_to_fedavg() {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let ds = toy_dataset(&mut rng, 25, 4, 3);
    let global = ModelParams::init(&[4, 6, 3], &mut rng).unwrap();
    let hist = ModelParams::init(&[4, 6, 3], &mut rng).unwrap();
    let mut base = client(&global, 0.05, 0.9, 1e-5, ds.len());
    base.historical_model = Some(hist);
    let t = training(2, 6);
    let mut reference = base.clone();
    local_update_fedavg(&mut reference, &ds, &t, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();

    let degenerate = [
        StrategyKind::FedProx { mu: 0.0 },
        StrategyKind::PFedSd { lambda: 0.0, tau: 3.0 },
        StrategyKind::FedCkd {
            schedule: AnnealSchedule::new(0.0, 0.99, true).unwrap(),
            tau: 3.0,
            global_teacher: true,
            historical_teacher: true,
        },
    ];
    for kind in degenerate {
        let mut c = base.clone();
        local_update(&kind, &mut c, &ds, &global, 7, &t, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(c.local_model, reference.local_model, "{}", kind.name());
    }
}

#[test]
fn updates_preserve_shape_and_finiteness() {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let ds = toy_dataset(&mut rng, 40, 6, 4);
    let global = ModelParams::init(&[6, 10, 8, 4], &mut rng).unwrap();
    for kind in all_kinds() {
        let mut c = client(&global, 0.05, 0.9, 1e-5, ds.len());
        for round in 0..3 {
            local_update(&kind, &mut c, &ds, &global, round, &training(2, 8), &mut rng).unwrap();
            assert!(c.local_model.same_shape(&global));
            assert!(c.local_model.is_finite(), "{}", kind.name());
            c.historical_model = Some(c.local_model.clone());
        }
    }
}

#[test]
fn empty_train_set_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let ds = toy_dataset(&mut rng, 5, 2, 2);
    let model = ModelParams::init(&[2, 2], &mut rng).unwrap();
    let mut c = client(&model, 0.1, 0.0, 0.0, 0);
    assert!(local_update_fedavg(&mut c, &ds, &training(1, 4), &mut rng).is_err());
}

#[test]
fn near_noiseless_blobs_are_fit_exactly() {
    let ds = fedckd::data::synth_blobs(4, 25, 3, 1e-6, 17).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let model = ModelParams::init(&[3, 16, 4], &mut rng).unwrap();
    let mut c = client(&model, 0.05, 0.9, 0.0, ds.len());
    local_update_fedavg(&mut c, &ds, &training(100, 10), &mut rng).unwrap();
    assert_eq!(fedckd::nn::accuracy(&c.local_model, ds.features(), ds.labels()).unwrap(), 1.0);
}
