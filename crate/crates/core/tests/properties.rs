use proptest::prelude::*;
use rand::Rng;
use smc_core::channel::VectorChannel;
use smc_core::data::{make_synthetic, Corpus};
use smc_core::lewis::{
    best_response_check, check_profile, classify_equilibrium, classify_sender_map, profile_payoff, EquilibriumClass,
    GreedyProfile, PolicyPair, SignalingGame,
};
use smc_core::nn::{Activation, DenseNet, LossKind};
use smc_core::sm::{emulate_smc, mse, sm_consistency, AgentId, SemanticMultiverse, SkRole};
use smc_core::symbolic::{
    build_graph, cluster_srs, edit_graph, emit_problog, expression_entropy, graph_entropy, parse_problog, GraphEdit,
    MappingRow, MappingTable, MergeRule, SymbolicGraph, Weighting,
};
use smc_core::sync::{fedavg_round, CodecSpec};
use smc_core::{seeded, DiscreteChannel};

const CONSERVATION_TOL: f64 = 1e-12;
/// Half a unit in the twelfth decimal printed by the ProbLog emitter.
const PRINT_TOL: f64 = 5e-13;

fn small_net(seed: u64, act: Activation) -> DenseNet {
    DenseNet::random(3, &[(4, act), (2, Activation::Sigmoid)], &mut seeded(seed)).unwrap()
}

fn table_strategy() -> impl Strategy<Value = MappingTable> {
    (2usize..5, 1usize..4, 1usize..5).prop_flat_map(|(levels, width, actions)| {
        prop::collection::vec((prop::collection::vec(0..levels, width), 0..actions), 1..40).prop_map(move |rows| {
            let rows = rows
                .into_iter()
                .enumerate()
                .map(|(state, (cells, action))| MappingRow { state, cells, action })
                .collect();
            MappingTable::new(rows, levels).unwrap()
        })
    })
}

fn conserves(g: &SymbolicGraph) -> bool {
    g.sr_nodes().all(|sr| {
        let sum: f64 = g.outgoing(sr).unwrap().iter().map(|e| e.2).sum();
        (sum - 1.0).abs() <= CONSERVATION_TOL
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn equal_seeds_give_identical_networks_and_steps(seed in any::<u64>(), lr in 0.001f64..1.0) {
        let a = small_net(seed, Activation::Tanh);
        let b = small_net(seed, Activation::Tanh);
        prop_assert_eq!(a.to_bytes(), b.to_bytes());
        let x = [0.3, -0.2, 0.9];
        let step = |n: &DenseNet| {
            let (_, g) = n.backward(&n.forward(&x).unwrap(), LossKind::Mse, &[0.1, 0.7]).unwrap();
            n.sgd_step(&g, lr).unwrap().to_bytes()
        };
        prop_assert_eq!(step(&a), step(&b));
    }

    #[test]
    fn frozen_tensors_never_move(
        seed in any::<u64>(),
        mask in prop::collection::vec((any::<bool>(), any::<bool>()), 2),
        steps in 1usize..25,
    ) {
        let mut net = small_net(seed, Activation::Relu);
        for (layer, &(w, b)) in net.layers_mut().iter_mut().zip(&mask) {
            layer.set_frozen(w, b);
        }
        let before = net.clone();
        let mut rng = seeded(seed ^ 1);
        for _ in 0..steps {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let t: Vec<f64> = (0..2).map(|_| rng.random_range(0.0..1.0)).collect();
            let (_, g) = net.backward(&net.forward(&x).unwrap(), LossKind::Mse, &t).unwrap();
            net.apply_sgd(&g, 0.5).unwrap();
        }
        for ((old, new), &(w, b)) in before.layers().iter().zip(net.layers()).zip(&mask) {
            if w {
                prop_assert!(old.weights().iter().zip(new.weights()).all(|(p, q)| p.to_bits() == q.to_bits()));
            }
            if b {
                prop_assert!(old.bias().iter().zip(new.bias()).all(|(p, q)| p.to_bits() == q.to_bits()));
            }
        }
    }

    #[test]
    fn row_scaling_keeps_greedy_behavior(
        (t, s, sender, receiver) in (1usize..5, 1usize..5).prop_flat_map(|(t, s)| (
            Just(t),
            Just(s),
            prop::collection::vec(prop::collection::vec(1u32..100, s), t),
            prop::collection::vec(prop::collection::vec(1u32..100, t), s),
        )),
        scale in 1e-3f64..1e3,
        pick in any::<prop::sample::Index>(),
        on_sender in any::<bool>(),
    ) {
        let game = SignalingGame::identity(t, t, DiscreteChannel::identity(s).unwrap()).unwrap();
        let to_f = |m: Vec<Vec<u32>>| m.into_iter().map(|r| r.into_iter().map(f64::from).collect()).collect();
        let base = PolicyPair { sender: to_f(sender), receiver: to_f(receiver) };
        let mut scaled = base.clone();
        let rows = if on_sender { &mut scaled.sender } else { &mut scaled.receiver };
        let i = pick.index(rows.len());
        rows[i].iter_mut().for_each(|v| *v *= scale);

        prop_assert_eq!(base.greedy(), scaled.greedy());
        prop_assert_eq!(classify_equilibrium(&base, 0.0), classify_equilibrium(&scaled, 0.0));
        let g = base.greedy();
        let pure = |p: &PolicyPair| PolicyPair::from_profile(&p.greedy(), &game);
        prop_assert_eq!(
            best_response_check(&game, &pure(&base)).unwrap().is_nash,
            best_response_check(&game, &pure(&scaled)).unwrap().is_nash
        );
        prop_assert_eq!(check_profile(&game, &g).is_nash, check_profile(&game, &scaled.greedy()).is_nash);
    }

    #[test]
    fn optimal_nash_profiles_separate(
        (t, s, sender, receiver) in (1usize..4).prop_flat_map(|t| (t..5).prop_flat_map(move |s| (
            Just(t),
            Just(s),
            prop::collection::vec(0..s, t),
            prop::collection::vec(0..t, s),
        ))),
    ) {
        let game = SignalingGame::identity(t, t, DiscreteChannel::identity(s).unwrap()).unwrap();
        let profile = GreedyProfile { sender, receiver };
        if check_profile(&game, &profile).is_nash && profile_payoff(&game, &profile) == 1.0 {
            prop_assert_eq!(classify_sender_map(&profile.sender), EquilibriumClass::Separating);
        }
    }

    #[test]
    fn consistency_is_symmetric_and_monotone(
        sa in any::<u64>(),
        sb in any::<u64>(),
        t1 in 0.0f64..0.5,
        dt in 0.0f64..0.5,
        probe_seed in any::<u64>(),
    ) {
        let sm = |seed: u64, id: &str| {
            let mut rng = seeded(seed);
            let enc = DenseNet::random(4, &[(2, Activation::Tanh)], &mut rng).unwrap();
            let gen = DenseNet::random(2, &[(4, Activation::Sigmoid)], &mut rng).unwrap();
            SemanticMultiverse::new(AgentId::new(id).unwrap(), enc, gen).unwrap()
        };
        let (a, b) = (sm(sa, "a"), sm(sb, "b"));
        let mut rng = seeded(probe_seed);
        let probes: Vec<Vec<f64>> = (0..30).map(|_| (0..4).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let refs: Vec<&[f64]> = probes.iter().map(Vec::as_slice).collect();
        let d1 = sm_consistency(&a, &b, &refs, t1).unwrap();
        prop_assert_eq!(d1, sm_consistency(&b, &a, &refs, t1).unwrap());
        prop_assert!(sm_consistency(&a, &b, &refs, t1 + dt).unwrap() <= d1);
    }

    #[test]
    fn clean_emulation_is_exact_composition(seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let enc = DenseNet::random(4, &[(3, Activation::Tanh)], &mut rng).unwrap();
        let foreign_gen = DenseNet::random(3, &[(4, Activation::Sigmoid)], &mut rng).unwrap();
        let own_gen = DenseNet::random(3, &[(4, Activation::Sigmoid)], &mut rng).unwrap();
        let mut local = SemanticMultiverse::new(AgentId::new("local").unwrap(), enc.clone(), own_gen).unwrap();
        let foreign = AgentId::new("foreign").unwrap();
        local.kb.insert_network(foreign.clone(), SkRole::Generator, &foreign_gen);
        local.kb.insert_channel(local.agent().clone(), foreign.clone(), VectorChannel::Clean);
        let probes: Vec<Vec<f64>> = (0..10).map(|_| (0..4).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let refs: Vec<&[f64]> = probes.iter().map(Vec::as_slice).collect();
        let m = emulate_smc(&local, &foreign, &refs, &mut rng).unwrap();
        for (p, got) in probes.iter().zip(&m.per_probe_mse) {
            let want = mse(&foreign_gen.predict(&enc.predict(p).unwrap()).unwrap(), p);
            prop_assert_eq!(got.to_bits(), want.to_bits());
        }
    }

    #[test]
    fn fedavg_ledger_counts_serialized_sizes(seed in any::<u64>(), sr in 1usize..6, hidden in 1usize..9) {
        let spec = CodecSpec { sr_dim: sr, encoder_hidden: vec![hidden], generator_hidden: vec![hidden] };
        let ab = spec.build(8, &mut seeded(seed)).unwrap();
        let cd = spec.build(8, &mut seeded(seed ^ 7)).unwrap();
        let out = fedavg_round(&ab, &cd).unwrap();
        let pair_bytes = (ab.encoder.serialized_len() + ab.generator.serialized_len()) as u64;
        prop_assert_eq!(out.ledger.total(), 4 * pair_bytes);
        prop_assert_eq!(out.averaged.encoder.to_bytes().len() + out.averaged.generator.to_bytes().len(), pair_bytes as usize);
    }

    #[test]
    fn held_out_indices_disjoint_from_training(n in 1usize..30, frac in 0.0f64..0.9, seed in any::<u64>()) {
        let d = make_synthetic(Corpus::Blobs, n, seed).unwrap().stratified_split(frac, seed).unwrap();
        let split = d.split();
        prop_assert!(split.is_partition_of(d.len()));
        prop_assert!(split.train.iter().all(|i| !split.heldout.contains(i)));
    }

    #[test]
    fn probabilities_conserved_through_edits(table in table_strategy(), r in 0usize..3, forbid in 0usize..5) {
        let g = build_graph(&cluster_srs(&table, MergeRule::Radius { r })).unwrap();
        prop_assert!(conserves(&g));
        if let Ok(edited) = edit_graph(&g, GraphEdit::ForbidAction { action: forbid }) {
            prop_assert!(conserves(&edited));
            // Remaining counts are untouched; probabilities are recomputed from them.
            for sr in edited.sr_nodes() {
                let before = g.outgoing(sr).unwrap();
                let after = edited.outgoing(sr).unwrap();
                let support: u64 = after.iter().map(|e| e.1).sum();
                for (a, c, p) in after {
                    prop_assert!(a != forbid);
                    prop_assert_eq!(Some(c), before.iter().find(|e| e.0 == a).map(|e| e.1));
                    prop_assert_eq!(p, c as f64 / support as f64);
                }
            }
        }
        let top = g.sr_nodes().max().unwrap();
        let moved = edit_graph(&g, GraphEdit::RelabelSr { old: 0, new: top + 1 }).unwrap();
        prop_assert!(conserves(&moved));
        prop_assert_eq!(moved.outgoing(top + 1).unwrap(), g.outgoing(0).unwrap());
    }

    #[test]
    fn entropy_bounded_by_action_count(table in table_strategy(), r in 0usize..3) {
        let g = build_graph(&cluster_srs(&table, MergeRule::Radius { r })).unwrap();
        for sr in g.sr_nodes() {
            let h = expression_entropy(&g, sr).unwrap();
            let k = g.outgoing(sr).unwrap().len() as f64;
            prop_assert!(h >= 0.0 && h <= k.log2() + CONSERVATION_TOL);
        }
        let max = g.actions().len() as f64;
        for w in [Weighting::Uniform, Weighting::Support] {
            let h = graph_entropy(&g, w);
            prop_assert!(h >= 0.0 && h <= max.log2() + CONSERVATION_TOL);
        }
    }

    #[test]
    fn wider_radius_never_lowers_graph_entropy(table in table_strategy()) {
        let h: Vec<f64> = (0..4)
            .map(|r| graph_entropy(&build_graph(&cluster_srs(&table, MergeRule::Radius { r })).unwrap(), Weighting::Support))
            .collect();
        for w in h.windows(2) {
            prop_assert!(w[1] >= w[0] - CONSERVATION_TOL, "{:?}", h);
        }
    }

    #[test]
    fn problog_round_trip_restores_edges(table in table_strategy(), r in 0usize..3) {
        let g = build_graph(&cluster_srs(&table, MergeRule::Radius { r })).unwrap();
        let text = emit_problog(&g);
        let parsed = parse_problog(&text).unwrap();
        let edges = g.edges();
        prop_assert_eq!(parsed.clauses.len(), edges.len());
        for (c, e) in parsed.clauses.iter().zip(&edges) {
            prop_assert_eq!((c.sr, c.action), (e.sr, e.action));
            prop_assert!((c.probability - e.probability).abs() <= PRINT_TOL);
        }
        prop_assert_eq!(parsed.to_text(), text);
    }
}
