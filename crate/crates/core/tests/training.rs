use ratiobench::models::{GeneratorNet, Head, RatioNet};
use ratiobench::prob::GaussianSpec;
use ratiobench::rng::RngState;
use ratiobench::scoring::{GeneratorVariant, ScoringRule};
use ratiobench::trainer::{
    train, DataSource, GeneratorLoss, GeneratorModel, OptimizerKind, RatioLoss, TrainConfig, Trainer,
};

fn data_2d() -> DataSource {
    GaussianSpec::new(vec![1.0, -1.0], vec![0.5, 0.5]).unwrap().into()
}

fn small_config(ratio: RatioLoss, gen: GeneratorLoss) -> TrainConfig {
    let mut cfg = TrainConfig::new(ratio, gen);
    cfg.batch_size = 32;
    cfg.iterations = 10;
    cfg.log_every = 5;
    cfg.seed = 3;
    cfg
}

fn nets(ratio: RatioLoss, seed: u64) -> (GeneratorModel, Option<RatioNet>) {
    let mut rng = RngState::new(seed);
    let gen = GeneratorNet::new(2, &[8], 2, &mut rng).unwrap();
    let net = ratio.head().map(|h| RatioNet::new(2, &[8], h, &mut rng).unwrap());
    (GeneratorModel::Net(gen), net)
}

fn gen_params(t: &Trainer) -> Vec<f64> {
    match t.generator() {
        GeneratorModel::Net(g) => g.params().values().to_vec(),
        GeneratorModel::Fixed(_) => panic!("expected a trainable generator"),
    }
}

#[test]
fn ratio_and_generator_steps_touch_disjoint_parameters() {
    let ratio = RatioLoss::Cpe(ScoringRule::Bernoulli);
    let cfg = small_config(ratio, GeneratorLoss::Cpe(GeneratorVariant::Nonsaturating));
    let (gen, net) = nets(ratio, 1);
    let mut t = Trainer::new(cfg, data_2d(), gen, net).unwrap();
    for _ in 0..5 {
        let theta = gen_params(&t);
        let phi = t.ratio().unwrap().params().values().to_vec();
        t.ratio_step().unwrap();
        assert_eq!(gen_params(&t), theta);
        assert_ne!(t.ratio().unwrap().params().values(), &phi[..]);

        let theta = gen_params(&t);
        let phi = t.ratio().unwrap().params().values().to_vec();
        t.generator_step().unwrap();
        assert_eq!(t.ratio().unwrap().params().values(), &phi[..]);
        assert_ne!(gen_params(&t), theta);
    }
}

#[test]
fn every_compatible_loss_pair_trains() {
    let mut ran = 0;
    for r in RatioLoss::registered_names() {
        for g in GeneratorLoss::registered_names() {
            let ratio: RatioLoss = r.parse().unwrap();
            let gen: GeneratorLoss = g.parse().unwrap();
            if gen.needs_ratio() && ratio == RatioLoss::None {
                continue;
            }
            let (model, net) = nets(ratio, 2);
            let out = train(small_config(ratio, gen), data_2d(), model, net)
                .unwrap_or_else(|e| panic!("{r} x {g}: {e}"));
            assert_eq!(out.report.records.len(), 2, "{r} x {g}");
            let last = out.report.last().unwrap();
            assert!(last.gen_loss.is_finite(), "{r} x {g}");
            assert_eq!(last.ratio_loss.is_finite(), ratio != RatioLoss::None, "{r} x {g}");
            ran += 1;
        }
    }
    assert!(ran >= 150, "only {ran} pairs ran");
}

#[test]
fn kliep_is_rejected_as_a_generator_loss() {
    let ratio: RatioLoss = "kliep".parse().unwrap();
    let gen: GeneratorLoss = "kliep".parse().unwrap();
    let (model, net) = nets(ratio, 2);
    assert!(train(small_config(ratio, gen), data_2d(), model, net).is_err());
}

/// Trains a discriminator to near-perfection on well-separated data, then
/// returns the generator-gradient norm under `variant`.
fn gradient_norm_after_discriminator_training(variant: GeneratorVariant) -> (f64, f64) {
    let data: DataSource = GaussianSpec::univariate(6.0, 0.1).unwrap().into();
    let mut rng = RngState::new(9);
    let gen = GeneratorNet::new(1, &[8], 1, &mut rng).unwrap();
    let net = RatioNet::new(1, &[8], Head::Probability, &mut rng).unwrap();
    let mut cfg = TrainConfig::new(RatioLoss::Cpe(ScoringRule::Bernoulli), GeneratorLoss::Cpe(variant));
    cfg.batch_size = 128;
    cfg.optimizer = OptimizerKind::adam(1e-2);
    cfg.seed = 9;
    let mut t = Trainer::new(cfg, data, GeneratorModel::Net(gen), Some(net)).unwrap();
    let mut stats = t.ratio_step().unwrap();
    for _ in 0..400 {
        stats = t.ratio_step().unwrap();
    }
    let (_, grad) = t.generator_gradient().unwrap();
    (grad.norm(), stats.mean_d_gen)
}

#[test]
fn minimax_gradient_vanishes_against_a_confident_discriminator() {
    let (mm, d_mm) = gradient_norm_after_discriminator_training(GeneratorVariant::Minimax);
    let (ns, d_ns) = gradient_norm_after_discriminator_training(GeneratorVariant::Nonsaturating);
    assert_eq!(d_mm, d_ns);
    assert!(d_mm < 0.05, "discriminator not confident: mean D on fakes {d_mm}");
    assert!(mm < ns, "minimax {mm} vs nonsaturating {ns}");
}

#[test]
fn equal_seeds_give_identical_reports() {
    let run = || {
        let ratio = RatioLoss::FDiv(ratiobench::fdiv::FDivSpec::KL);
        let mut cfg = small_config(ratio, GeneratorLoss::FDiv(ratiobench::fdiv::FDivSpec::KL));
        cfg.iterations = 30;
        cfg.eval_n = 100;
        cfg.instance_noise = 0.2;
        let (model, net) = nets(ratio, 4);
        train(cfg, data_2d(), model, net).unwrap().report.to_csv_string().unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn fixed_generator_leaves_only_the_ratio_side_training() {
    let ratio = RatioLoss::Cpe(ScoringRule::Brier);
    let mut cfg = small_config(ratio, GeneratorLoss::Cpe(GeneratorVariant::Nonsaturating));
    cfg.iterations = 20;
    let mut rng = RngState::new(5);
    let net = RatioNet::new(2, &[8], Head::Probability, &mut rng).unwrap();
    let out = train(cfg, data_2d(), GeneratorModel::Fixed(data_2d()), Some(net)).unwrap();
    for r in &out.report.records {
        assert!(r.gen_loss.is_nan());
        assert!(r.ratio_loss.is_finite());
    }
    let csv = out.report.to_csv_string().unwrap();
    assert!(csv.lines().nth(1).unwrap().contains(",,"), "{csv}");
}

#[test]
fn moment_matching_matches_the_first_two_raw_moments() {
    let data: DataSource = GaussianSpec::univariate(2.0, 0.25).unwrap().into();
    let mut rng = RngState::new(8);
    let gen = GeneratorNet::new(1, &[8], 1, &mut rng).unwrap();
    let mut cfg = TrainConfig::new(RatioLoss::None, GeneratorLoss::Moments(2));
    cfg.iterations = 600;
    cfg.batch_size = 256;
    cfg.optimizer = OptimizerKind::adam(1e-2);
    cfg.log_every = 600;
    let out = train(cfg, data, GeneratorModel::Net(gen), None).unwrap();
    let x = out.generator.sample(4000, &mut rng).unwrap();
    let m = x.col_means()[0];
    let m2 = x.as_slice().iter().map(|a| a * a).sum::<f64>() / 4000.0;
    assert!((m - 2.0).abs() < 0.1, "mean {m}");
    assert!((m2 - 4.25).abs() < 0.2, "second moment {m2}");
}
