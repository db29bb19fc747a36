mod common;

use common::{fd_check_adapter, fd_check_base, jitter, random_items};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use relightkit::diffusion::{
    draw_noise, grad_with_draws, loss_with_draws, merge_lora, predictor_loss, ConditioningStack,
    Denoiser, LoraAdapter, NetConfig, Schedule, TrainItem, X0Predictor,
};

fn micro_setup(
    seed: u64,
) -> (
    Denoiser<f64>,
    Vec<TrainItem>,
    Vec<relightkit::diffusion::NoiseDraw>,
    Schedule,
) {
    let mut net = Denoiser::<f64>::init(&NetConfig::micro(), seed).unwrap();
    jitter(&mut net.params.tensors, 0.1, seed + 1);
    let items = random_items(2, 8, seed + 2);
    let schedule = Schedule::default();
    let batch: Vec<&TrainItem> = items.iter().collect();
    let draws = draw_noise(&mut ChaCha8Rng::seed_from_u64(seed + 3), &schedule, &batch);
    (net, items, draws, schedule)
}

#[test]
fn base_gradients_match_finite_differences() {
    let (net, items, draws, schedule) = micro_setup(10);
    let rep = fd_check_base(&net, &items, &draws, &schedule, 1e-3);
    println!(
        "checked {} entries, worst {}, group {:e}",
        rep.checked, rep.worst, rep.max_group_rel
    );
    assert!(
        rep.max_entry_rel < 1e-3,
        "max rel err {} at {}",
        rep.max_entry_rel,
        rep.worst
    );
    assert!(rep.max_group_rel < 1e-3);
}

#[test]
fn adapter_gradients_match_finite_differences() {
    let (net, items, draws, schedule) = micro_setup(20);
    let mut ad = LoraAdapter::new(&net, 2, 4.0, 5).unwrap();
    jitter(&mut ad.up, 0.05, 6);
    let rep = fd_check_adapter(&net, &ad, &items, &draws, &schedule, 1e-3);
    assert!(
        rep.max_entry_rel < 1e-3,
        "max rel err {} at {}",
        rep.max_entry_rel,
        rep.worst
    );
}

#[test]
fn adapter_at_init_is_identity_and_down_grads_vanish() {
    let (net, items, draws, schedule) = micro_setup(30);
    let ad = LoraAdapter::new(&net, 8, 16.0, 7).unwrap();
    let batch: Vec<&TrainItem> = items.iter().collect();
    let a = loss_with_draws(&net, None, &batch, &draws, &schedule).unwrap();
    let b = loss_with_draws(&net, Some(&ad), &batch, &draws, &schedule).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
    let (_, g) = grad_with_draws(&net, Some(&ad), &batch, &draws, &schedule).unwrap();
    assert_eq!(g.len(), 2 * net.layout.convs.len());
    for (k, t) in g.iter().enumerate() {
        if k % 2 == 0 {
            assert!(
                t.iter().all(|v| *v == 0.0),
                "down factor {k} has nonzero gradient at zero up"
            );
        }
    }
    assert!(g
        .iter()
        .skip(1)
        .step_by(2)
        .any(|t| t.iter().any(|v| *v != 0.0)));
}

#[test]
fn merged_adapter_matches_unmerged() {
    let net = Denoiser::<f32>::init(&NetConfig::default(), 3).unwrap();
    let mut ad = LoraAdapter::new(&net, 8, 16.0, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for u in ad.up.iter_mut() {
        for v in u.iter_mut() {
            *v = rand::Rng::random_range(&mut rng, -0.05..0.05);
        }
    }
    let item = &random_items(1, 16, 11)[0];
    let stack = ConditioningStack::build(&item.target.data, &item.flat, &item.env).unwrap();
    let merged = merge_lora(&net, &ad).unwrap();
    let out_merged = merged.predict_x0(&stack, 50).unwrap();
    // unmerged: apply each layer's delta on the fly through the effective-weight path
    let netd = net.cast::<f64>();
    let add = LoraAdapter {
        rank: ad.rank,
        alpha: ad.alpha,
        layers: ad.layers.clone(),
        down: ad
            .down
            .iter()
            .map(|t| t.iter().map(|v| *v as f64).collect())
            .collect(),
        up: ad
            .up
            .iter()
            .map(|t| t.iter().map(|v| *v as f64).collect())
            .collect(),
    };
    let input: Vec<f64> = stack.data.iter().map(|v| *v as f64).collect();
    let eff = merge_lora(&netd, &add).unwrap();
    let reference = eff.predict(&input, 16, 16, 50.0).unwrap();
    let max = out_merged
        .iter()
        .zip(&reference)
        .map(|(a, b)| (*a as f64 - b).abs())
        .fold(0.0, f64::max);
    assert!(max < 1e-5, "merged vs reference {max}");
}

struct Oracle<'a>(&'a [TrainItem], std::cell::Cell<usize>);

// SAFETY-free: the counter is only touched from the test thread.
unsafe impl Sync for Oracle<'_> {}

impl X0Predictor for Oracle<'_> {
    fn predict_x0(&self, _stack: &ConditioningStack, _t: usize) -> relightkit::Result<Vec<f32>> {
        let i = self.1.get();
        self.1.set(i + 1);
        Ok(self.0[i].target.data.clone())
    }
}

#[test]
fn oracle_and_zero_predictors() {
    let items = random_items(3, 8, 40);
    let schedule = Schedule::default();
    let batch: Vec<&TrainItem> = items.iter().collect();
    let draws = draw_noise(&mut ChaCha8Rng::seed_from_u64(1), &schedule, &batch);
    let oracle = Oracle(&items, std::cell::Cell::new(0));
    assert_eq!(
        predictor_loss(&oracle, &batch, &draws, &schedule).unwrap(),
        0.0
    );

    let mut zero = Denoiser::<f32>::init(&NetConfig::micro(), 1).unwrap();
    zero.params
        .tensors
        .iter_mut()
        .flatten()
        .for_each(|v| *v = 0.0);
    let c = 0.375f32;
    let mut constant = items.clone();
    for it in constant.iter_mut() {
        it.target.data.iter_mut().for_each(|v| *v = c);
    }
    let cb: Vec<&TrainItem> = constant.iter().collect();
    let l = loss_with_draws(&zero, None, &cb, &draws, &schedule).unwrap();
    assert!((l - (c * c) as f64).abs() < 1e-12);
}

#[test]
fn batch_order_permutes_outputs() {
    let net = Denoiser::<f32>::init(&NetConfig::micro(), 2).unwrap();
    let items = random_items(3, 8, 41);
    let outs: Vec<Vec<f32>> = items
        .iter()
        .map(|it| {
            let s = ConditioningStack::build(&it.target.data, &it.flat, &it.env).unwrap();
            net.predict_x0(&s, 10).unwrap()
        })
        .collect();
    for (i, it) in items.iter().enumerate().rev() {
        let s = ConditioningStack::build(&it.target.data, &it.flat, &it.env).unwrap();
        assert_eq!(net.predict_x0(&s, 10).unwrap(), outs[i]);
    }
}
