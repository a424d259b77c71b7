use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regimenet_core::bayesnet::{BayesianNetwork, Cpd, DirichletPrior, DiscreteVariable, NetError};
use regimenet_core::textbook::{computer_failure, sprinkler};
use regimenet_core::{fit_bayesian, fit_mle, joint_probability, map_predict, query, Dag, DiscreteDataset, Evidence};

fn ev(pairs: &[(&str, usize)]) -> Evidence {
    pairs.iter().map(|&(k, v)| (k.to_string(), v)).collect()
}

#[test]
fn computer_failure_goldens() {
    let net = computer_failure();
    let c = query(&net, "C", &Evidence::new()).unwrap();
    assert!((c.probs[1] - 0.19).abs() <= 1e-9);
    let e = query(&net, "E", &ev(&[("C", 1)])).unwrap();
    assert!((e.probs[1] - 10.0 / 19.0).abs() <= 1e-9);
    let m = query(&net, "M", &ev(&[("C", 1)])).unwrap();
    assert!((m.probs[1] - 11.0 / 19.0).abs() <= 1e-9);
    let j = joint_probability(&net, &ev(&[("E", 1), ("M", 0), ("C", 1)])).unwrap();
    assert!((j - 0.08).abs() < 1e-15);
}

#[test]
fn sprinkler_golden() {
    let p = query(&sprinkler(), "R", &ev(&[("G", 1)])).unwrap();
    assert!((p.probs[1] - 0.002 / 0.1972).abs() <= 1e-6, "{}", p.probs[1]);
    assert!((p.probs[1] - 0.010142).abs() <= 1e-6);
}

/// Random network over three variables (cards 3, 2, 3) with edges chosen by `mask`.
fn random_net(seed: u64, mask: u8) -> BayesianNetwork {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = ["A", "B", "C"];
    let cards = [3usize, 2, 3];
    let candidates = [("A", "B"), ("A", "C"), ("B", "C")];
    let edges: Vec<_> = candidates
        .iter()
        .enumerate()
        .filter(|(i, _)| mask >> i & 1 == 1)
        .map(|(_, e)| *e)
        .collect();
    let dag = Dag::from_edges(names, edges).unwrap();
    let cpds = (0..3)
        .map(|v| {
            let parents: Vec<usize> = dag.parents(v).iter().copied().collect();
            let pc: Vec<usize> = parents.iter().map(|&p| cards[p]).collect();
            let n_cfg: usize = pc.iter().product();
            let mut values = vec![0.0; cards[v] * n_cfg];
            for cfg in 0..n_cfg {
                let w: Vec<f64> = (0..cards[v]).map(|_| rng.random_range(0.05..1.0)).collect();
                let t: f64 = w.iter().sum();
                for s in 0..cards[v] {
                    values[s * n_cfg + cfg] = w[s] / t;
                }
            }
            Cpd::new(cards[v], parents, pc, values).unwrap()
        })
        .collect();
    let vars = names.iter().zip(cards).map(|(n, c)| DiscreteVariable::with_card(*n, c)).collect();
    BayesianNetwork::new(vars, dag, cpds).unwrap()
}

fn brute_posterior(net: &BayesianNetwork, target: usize, evidence: &[(usize, usize)]) -> Vec<f64> {
    let cards: Vec<usize> = (0..net.len()).map(|v| net.card(v)).collect();
    let mut post = vec![0.0; cards[target]];
    let total: usize = cards.iter().product();
    for idx in 0..total {
        let mut rest = idx;
        let assign: Vec<usize> = cards
            .iter()
            .rev()
            .map(|&c| {
                let s = rest % c;
                rest /= c;
                s
            })
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .collect();
        if evidence.iter().any(|&(v, s)| assign[v] != s) {
            continue;
        }
        let full: Evidence = net
            .variables()
            .iter()
            .zip(&assign)
            .map(|(var, &s)| (var.name.clone(), s))
            .collect();
        post[assign[target]] += joint_probability(net, &full).unwrap();
    }
    let z: f64 = post.iter().sum();
    post.iter().map(|p| p / z).collect()
}

#[test]
fn map_predict_matches_joint_table_on_every_row() {
    let net = random_net(17, 0b111);
    let mut a = Vec::new();
    let mut c = Vec::new();
    let mut b = Vec::new();
    for x in 0..3 {
        for z in 0..3 {
            for y in 0..3 {
                a.push(x);
                c.push(z);
                b.push(y % 2);
            }
        }
    }
    // 27 rows, target B present but ignored
    let rows = DiscreteDataset::new(vec!["A".into(), "B".into(), "C".into()], vec![3, 2, 3], vec![a.clone(), b, c.clone()]).unwrap();
    let pred = map_predict(&net, &rows, "B").unwrap();
    for r in 0..27 {
        let post = brute_posterior(&net, 1, &[(0, a[r]), (2, c[r])]);
        let best = if post[1] > post[0] { 1 } else { 0 };
        assert_eq!(pred.states[r], best, "row {r}");
    }
}

proptest! {
    #[test]
    fn elimination_matches_enumeration(seed in 0u64..500, mask in 0u8..8, target in 0usize..3, ev_var in 0usize..3, ev_state in 0usize..2) {
        let net = random_net(seed, mask);
        let evidence: Vec<(usize, usize)> = if ev_var == target { vec![] } else { vec![(ev_var, ev_state)] };
        let named: Evidence = evidence.iter().map(|&(v, s)| (net.variables()[v].name.clone(), s)).collect();
        let got = query(&net, &net.variables()[target].name, &named).unwrap();
        let want = brute_posterior(&net, target, &evidence);
        for (g, w) in got.probs.iter().zip(&want) {
            prop_assert!((g - w).abs() < 1e-12);
        }
    }
}

#[test]
fn mle_recovers_identity_and_uniform_fallback() {
    let x = vec![0, 1, 2, 0, 1, 1];
    let data = DiscreteDataset::new(vec!["X".into(), "Y".into()], vec![3, 3], vec![x.clone(), x]).unwrap();
    let dag = Dag::from_edges(["X", "Y"], [("X", "Y")]).unwrap();
    let net = fit_mle(&dag, &data).unwrap();
    let y = net.cpd(1);
    for cfg in 0..3 {
        let d = y.distribution(cfg);
        for s in 0..3 {
            assert_eq!(d[s], if s == cfg { 1.0 } else { 0.0 });
        }
    }
    let partial = DiscreteDataset::new(vec!["X".into(), "Y".into()], vec![3, 3], vec![vec![0, 0], vec![1, 2]]).unwrap();
    let net = fit_mle(&dag, &partial).unwrap();
    assert_eq!(net.cpd(1).distribution(2), vec![1.0 / 3.0; 3]);
    assert_eq!(net.cpd(1).distribution(0), vec![0.0, 0.5, 0.5]);
}

#[test]
fn bayesian_fit_pseudo_counts() {
    let empty = DiscreteDataset::new(vec!["X".into()], vec![3], vec![vec![]]).unwrap();
    let dag = Dag::new(["X"]).unwrap();
    let net = fit_bayesian(&dag, &empty, DirichletPrior::K2).unwrap();
    assert_eq!(net.cpd(0).distribution(0), vec![1.0 / 3.0; 3]);

    let data = DiscreteDataset::new(vec!["X".into()], vec![3], vec![vec![0, 0, 1]]).unwrap();
    let k2 = fit_bayesian(&dag, &data, DirichletPrior::K2).unwrap();
    assert_eq!(k2.cpd(0).distribution(0), vec![3.0 / 6.0, 2.0 / 6.0, 1.0 / 6.0]);
    let bdeu = fit_bayesian(&dag, &data, DirichletPrior::Bdeu { ess: 3.0 }).unwrap();
    assert_eq!(bdeu.cpd(0).distribution(0), vec![3.0 / 6.0, 2.0 / 6.0, 1.0 / 6.0]);
    assert!(fit_bayesian(&dag, &data, DirichletPrior::Bdeu { ess: 0.0 }).is_err());
}

#[test]
fn network_json_round_trips() {
    let net = random_net(3, 0b101);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.bn.json");
    net.save(&path).unwrap();
    let back = BayesianNetwork::load(&path).unwrap();
    assert_eq!(back.to_json(), net.to_json());
    for v in 0..3 {
        assert_eq!(back.cpd(v).values(), net.cpd(v).values());
    }
    let mut text = net.to_json();
    text = text.replacen('{', "{\"extra\": 1, ", 1);
    assert!(matches!(BayesianNetwork::from_json(&text), Err(NetError::Format(_))));
}

#[test]
fn impossible_evidence_is_reported() {
    let err = query(&computer_failure(), "M", &ev(&[("E", 1), ("C", 0)])).unwrap_err();
    assert!(matches!(err, NetError::InconsistentEvidence));
}
