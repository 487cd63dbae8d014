//! Property tests for the protocol, cache, fusion, cost and perf layers.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Duration;

use proptest::prelude::*;

use gradsync::backend::{collective_cost, reduce_oracle, Algorithm, CostModel};
use gradsync::bitvector::{
    cache_insert, decode, intersect, populate, ResponseCache, StatusSignals, RESERVED_BITS,
};
use gradsync::fusion::{cycle_scope, Fuser, FusionPolicy, GroupId, GroupSpec};
use gradsync::perf::{
    conv_ops, performance, Category, ConvLayerSpec, TimingRecord, CONV_BACKPROP_INPUT,
    CONV_BACKPROP_KERNEL, CONV_FWD,
};
use gradsync::protocol::{
    merge_requests, CollectiveKind, MergeOutcome, Request, Response, TensorMeta,
};
use gradsync::workload::{gen_workload, GenParams, JitterSpec, Profile, WorkloadGraph};

fn tensor(name: &str, elems: u64) -> Arc<TensorMeta> {
    Arc::new(TensorMeta::new(name, vec![elems], 2).unwrap())
}

fn single(name: &str, elems: u64) -> Arc<Response> {
    match merge_requests(
        &[Request::new(
            0,
            tensor(name, elems),
            CollectiveKind::Allreduce,
        )],
        1,
    )
    .unwrap()
    {
        MergeOutcome::Complete(r) => Arc::new(r),
        other => panic!("{other:?}"),
    }
}

fn cache_of(responses: &[Arc<Response>], capacity: usize) -> ResponseCache {
    let mut cache = ResponseCache::with_capacity(capacity);
    for r in responses {
        cache_insert(&mut cache, r.clone()).unwrap();
    }
    cache
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn key_ignores_rank(name in "[a-z]{1,12}", elems in 1u64..1_000_000, r1 in 0usize..64, r2 in 0usize..64) {
        let t = tensor(&name, elems);
        let a = Request::new(r1, t.clone(), CollectiveKind::Allreduce);
        let b = Request::new(r2, Arc::new((*t).clone()), CollectiveKind::Allreduce);
        prop_assert_eq!(a.key(), b.key());
    }

    #[test]
    fn key_separates_metadata(elems in 1u64..1_000_000, other in 1u64..1_000_000) {
        prop_assume!(elems != other);
        let a = Request::new(0, tensor("w", elems), CollectiveKind::Allreduce);
        let b = Request::new(0, tensor("w", other), CollectiveKind::Allreduce);
        prop_assert_ne!(a.key(), b.key());
    }

    #[test]
    fn merge_ignores_request_order(p in 1usize..16, seed in any::<u64>()) {
        let t = tensor("g", 128);
        let mut reqs: Vec<Request> = (0..p).map(|r| Request::new(r, t.clone(), CollectiveKind::Allreduce)).collect();
        let forward = merge_requests(&reqs, p).unwrap();
        let n = reqs.len();
        reqs.rotate_left(seed as usize % n);
        reqs.reverse();
        prop_assert_eq!(forward, merge_requests(&reqs, p).unwrap());
    }

    #[test]
    fn merge_incomplete_until_all_ranks(p in 2usize..16, missing in 0usize..16) {
        let missing = missing % p;
        let t = tensor("g", 8);
        let reqs: Vec<Request> = (0..p).filter(|&r| r != missing).map(|r| Request::new(r, t.clone(), CollectiveKind::Allreduce)).collect();
        let is_incomplete = matches!(merge_requests(&reqs, p).unwrap(), MergeOutcome::Incomplete { .. });
        prop_assert!(is_incomplete);
    }

    #[test]
    fn cache_positions_are_stable(n in 1usize..200, repeats in 0usize..200) {
        let responses: Vec<Arc<Response>> = (0..n).map(|i| single(&format!("t{i}"), 4)).collect();
        let mut cache = cache_of(&responses, 256);
        let again = repeats % n;
        let bit = cache_insert(&mut cache, responses[again].clone()).unwrap();
        prop_assert_eq!(bit, again + RESERVED_BITS);
        prop_assert_eq!(cache.len(), n);
        for (i, r) in responses.iter().enumerate() {
            prop_assert_eq!(cache.bit_of(&r.key), Some(i + RESERVED_BITS));
            prop_assert_eq!(cache.response_at(i + RESERVED_BITS), Some(r));
        }
    }

    #[test]
    fn intersect_matches_brute_force(
        n in 1usize..100,
        sets in prop::collection::vec(prop::collection::btree_set(0usize..100, 0..100), 1..8),
        shutdown in prop::collection::vec(any::<bool>(), 8),
    ) {
        let responses: Vec<Arc<Response>> = (0..n).map(|i| single(&format!("t{i}"), 4)).collect();
        let cache = cache_of(&responses, 128);
        let sets: Vec<BTreeSet<usize>> = sets.into_iter().map(|s| s.into_iter().filter(|&i| i < n).collect()).collect();
        let vectors: Vec<_> = sets
            .iter()
            .zip(&shutdown)
            .map(|(s, &sd)| populate(&cache, s.iter().map(|&i| &responses[i].key), StatusSignals { shutdown: sd }))
            .collect();
        let combined = intersect(&vectors).unwrap();

        let mut common = sets[0].clone();
        for s in &sets[1..] {
            common = common.intersection(s).copied().collect();
        }
        let decoded: Vec<String> = decode(&cache, &combined).unwrap().iter().map(|r| r.tensor_names[0].clone()).collect();
        let expected: Vec<String> = common.iter().map(|i| format!("t{i}")).collect();
        prop_assert_eq!(decoded, expected);
        prop_assert_eq!(combined.shutdown(), shutdown[..sets.len()].iter().any(|&s| s));
        prop_assert!(!combined.cache_miss());
    }

    #[test]
    fn any_miss_sets_cache_miss(n in 1usize..50, p in 1usize..8, who in 0usize..8) {
        let responses: Vec<Arc<Response>> = (0..n).map(|i| single(&format!("t{i}"), 4)).collect();
        let cache = cache_of(&responses, 64);
        let stranger = single("not-cached", 4);
        let vectors: Vec<_> = (0..p)
            .map(|r| {
                let mut keys: Vec<_> = responses.iter().map(|x| &x.key).collect();
                if r == who % p {
                    keys.push(&stranger.key);
                }
                populate(&cache, keys, StatusSignals::default())
            })
            .collect();
        let combined = intersect(&vectors).unwrap();
        prop_assert!(combined.cache_miss());
        // Cached requests common to every rank still decode.
        prop_assert_eq!(decode(&cache, &combined).unwrap().len(), n);
    }

    #[test]
    fn identical_caches_decode_identically(n in 1usize..60, picks in prop::collection::btree_set(0usize..60, 0..60)) {
        let responses: Vec<Arc<Response>> = (0..n).map(|i| single(&format!("t{i}"), 4)).collect();
        let a = cache_of(&responses, 64);
        let b = cache_of(&responses, 64);
        let keys: Vec<_> = picks.iter().filter(|&&i| i < n).map(|&i| &responses[i].key).collect();
        let combined = intersect(&[
            populate(&a, keys.iter().copied(), StatusSignals::default()),
            populate(&b, keys.iter().copied(), StatusSignals::default()),
        ])
        .unwrap();
        prop_assert_eq!(decode(&a, &combined).unwrap(), decode(&b, &combined).unwrap());
    }

    #[test]
    fn grouped_fusion_releases_only_complete_groups(
        sizes in prop::collection::vec(1u64..4096, 2..30),
        assign in prop::collection::vec(0u32..5, 30),
        ready_us in prop::collection::vec(0u64..10_000, 30),
        ct_us in 100u64..3000,
    ) {
        let n = sizes.len();
        let responses: Vec<Arc<Response>> = sizes.iter().enumerate().map(|(i, &s)| single(&format!("t{i:02}"), s)).collect();
        let spec: GroupSpec = (0..n).map(|i| (format!("t{i:02}"), assign[i] as GroupId)).collect();
        let mut members: BTreeMap<GroupId, BTreeSet<String>> = BTreeMap::new();
        for (i, &g) in assign.iter().take(n).enumerate() {
            members.entry(g as GroupId).or_default().insert(format!("t{i:02}"));
        }
        let arrivals: Vec<(Duration, Arc<Response>)> = (0..n).map(|i| (Duration::from_micros(ready_us[i]), responses[i].clone())).collect();

        let mut fuser = Fuser::new(FusionPolicy::grouped(spec));
        let mut released = BTreeSet::new();
        for (_, ready) in cycle_scope(&arrivals, Duration::from_micros(ct_us)) {
            for batch in fuser.push(&ready).unwrap() {
                let names: BTreeSet<String> = batch.tensor_names().map(str::to_string).collect();
                let expected: BTreeSet<String> = batch.group_ids.iter().flat_map(|g| members[g].iter().cloned()).collect();
                prop_assert_eq!(&names, &expected);
                released.extend(names);
            }
        }
        prop_assert_eq!(released.len(), n);
        prop_assert!(fuser.deferred().is_empty());
    }

    #[test]
    fn cycle_scope_refines(times in prop::collection::vec(0u64..1_000_000, 1..100), ct in 1u64..10_000, factor in 1u64..8) {
        // Halving the cycle time never merges arrivals that a longer cycle kept apart.
        let arrivals: Vec<(Duration, usize)> = times.iter().enumerate().map(|(i, &t)| (Duration::from_nanos(t), i)).collect();
        let coarse = cycle_scope(&arrivals, Duration::from_nanos(ct * factor));
        let fine = cycle_scope(&arrivals, Duration::from_nanos(ct));
        let coarse_of: BTreeMap<usize, u64> = coarse.iter().flat_map(|(k, v)| v.iter().map(move |&i| (i, *k))).collect();
        for (_, items) in &fine {
            let ks: BTreeSet<u64> = items.iter().map(|i| coarse_of[i]).collect();
            prop_assert_eq!(ks.len(), 1);
        }
        prop_assert_eq!(fine.iter().map(|c| c.1.len()).sum::<usize>(), times.len());
    }

    #[test]
    fn reduce_ignores_worker_order(payloads in prop::collection::vec(prop::collection::vec(-1000i64..1000, 16), 1..10), shift in 0usize..10) {
        let mut rotated = payloads.clone();
        let n = rotated.len();
        rotated.rotate_left(shift % n);
        prop_assert_eq!(reduce_oracle(&payloads).unwrap(), reduce_oracle(&rotated).unwrap());
    }

    #[test]
    fn collective_cost_monotone(bytes in 0u64..1 << 30, extra in 1u64..1 << 20, p in 2usize..4096) {
        for algorithm in [Algorithm::Ring, Algorithm::DoubleBinaryTree] {
            let m = CostModel::new(5e-6, 1.0 / 12.5e9, algorithm).unwrap();
            prop_assert!(collective_cost(&m, bytes + extra, p) > collective_cost(&m, bytes, p));
            prop_assert!(collective_cost(&m, bytes, p * 2) >= collective_cost(&m, bytes, p));
        }
    }

    #[test]
    fn perf_scales_with_time(scale in 0.1f64..10.0, ops in 1e9f64..1e15) {
        let records = |k: f64| -> Vec<TimingRecord> {
            [(CONV_FWD, 10.0), (CONV_BACKPROP_KERNEL, 20.0), (CONV_BACKPROP_INPUT, 15.0)]
                .iter()
                .map(|(n, d)| TimingRecord { op_name: n.to_string(), category: Category::Compute, duration_ms: d * k })
                .chain(std::iter::once(TimingRecord { op_name: "allreduce".into(), category: Category::Communication, duration_ms: 5.0 * k }))
                .collect()
        };
        let base = performance(ops, &records(1.0)).unwrap();
        let scaled = performance(ops, &records(scale)).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs());
        prop_assert!(close(base.sustained_flops, scaled.sustained_flops * scale));
        prop_assert!(close(base.peak_flops, scaled.peak_flops * scale));
        prop_assert!(base.peak_flops >= base.sustained_flops);
    }

    #[test]
    fn conv_ops_multiplicative(h in 1u64..1000, w in 1u64..1000, c in 1u64..512, k in 1u64..512, r in 1u64..8, s in 1u64..8, m in 1u64..16) {
        let base = conv_ops(&ConvLayerSpec::new(h, w, c, k, r, s)).unwrap();
        prop_assert_eq!(base, 2 * (h * w * c * k * r * s) as u128);
        prop_assert_eq!(conv_ops(&ConvLayerSpec::new(h * m, w, c, k, r, s)).unwrap(), base * m as u128);
        prop_assert_eq!(conv_ops(&ConvLayerSpec::new(h, w, c, k * m, r, s)).unwrap(), base * m as u128);
    }

    #[test]
    fn workload_round_trips(total in 100u64..10_000_000, n in 1usize..100, seed in any::<u64>(), uniform in any::<bool>()) {
        prop_assume!(total >= n as u64);
        let graph = gen_workload(&GenParams {
            profile: if uniform { Profile::Uniform } else { Profile::FcDensenetLike },
            total_params: total,
            tensor_count: n,
            seed,
            jitter: JitterSpec::Normal { sigma_ns: 1000 },
            ..Default::default()
        })
        .unwrap();
        prop_assert_eq!(graph.total_params(), total);
        prop_assert_eq!(graph.len(), n);
        let text = serde_json::to_string(&graph.to_file()).unwrap();
        let back: WorkloadGraph = serde_json::from_str::<gradsync::workload::WorkloadFile>(&text).unwrap().into_graph().unwrap();
        prop_assert_eq!(back.to_file(), graph.to_file());
    }
}
