use proptest::prelude::*;
use synweb::hashtree::{prove_inclusion, root, verify_inclusion};
use synweb::sexpr::{self, Expr};
use synweb::{Commitment, Decode, Encode, InclusionProof, KeyPair, MerkleTree, NodeId, ProofFile, RoundState};

fn leaves() -> impl Strategy<Value = Vec<Vec<u8>>> {
    prop::collection::vec(prop::collection::vec(any::<u8>(), 0..24), 1..40)
}

fn expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        any::<i64>().prop_map(Expr::Int),
        "[a-z][a-z0-9-]{0,8}".prop_map(|s| Expr::symbol(&s).unwrap()),
        prop::collection::vec(any::<u8>(), 0..8).prop_map(Expr::Bytes),
    ];
    leaf.prop_recursive(4, 32, 6, |inner| prop::collection::vec(inner, 0..6).prop_map(Expr::list))
}

proptest! {
    #[test]
    fn every_leaf_proves_against_the_root(leaves in leaves(), pick in any::<prop::sample::Index>()) {
        let tree = MerkleTree::new(leaves.clone()).unwrap();
        let i = pick.index(leaves.len());
        let proof = prove_inclusion(&tree, i).unwrap();
        prop_assert_eq!(tree.root(), root(&leaves).unwrap());
        prop_assert!(verify_inclusion(&leaves[i], &proof, &tree.root()));
        prop_assert!(proof.audit_path.len() <= (leaves.len() as f64).log2().ceil() as usize);
    }

    #[test]
    fn proofs_do_not_transfer_between_leaves(leaves in leaves(), a in any::<prop::sample::Index>(), b in any::<prop::sample::Index>()) {
        let tree = MerkleTree::new(leaves.clone()).unwrap();
        let (i, j) = (a.index(leaves.len()), b.index(leaves.len()));
        prop_assume!(leaves[i] != leaves[j]);
        let proof = prove_inclusion(&tree, i).unwrap();
        prop_assert!(!verify_inclusion(&leaves[j], &proof, &tree.root()));
    }

    #[test]
    fn inclusion_proofs_survive_the_wire(leaves in leaves(), pick in any::<prop::sample::Index>()) {
        let tree = MerkleTree::new(leaves.clone()).unwrap();
        let proof = prove_inclusion(&tree, pick.index(leaves.len())).unwrap();
        prop_assert_eq!(InclusionProof::from_bytes(&proof.to_bytes()).unwrap(), proof);
    }

    #[test]
    fn printed_expressions_parse_back(e in expr()) {
        let printed = e.to_string();
        let parsed = sexpr::parse(&printed).unwrap();
        prop_assert_eq!(&parsed, &e);
        prop_assert_eq!(parsed.content_address(), e.content_address());
    }

    #[test]
    fn parser_never_panics(text in "\\PC{0,64}") {
        let _ = sexpr::parse(&text);
    }

    #[test]
    fn decoders_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..512)) {
        let _ = ProofFile::from_bytes(&bytes);
        let _ = RoundState::from_bytes(&bytes);
        let _ = Commitment::from_bytes(&bytes);
        let _ = InclusionProof::from_bytes(&bytes);
    }

    #[test]
    fn round_states_survive_the_wire(payload in expr(), seed in any::<[u8; 32]>()) {
        let key = KeyPair::from_seed(seed);
        let state = RoundState::genesis(key.node_id(), payload);
        prop_assert_eq!(RoundState::from_bytes(&state.to_bytes()).unwrap(), state);
    }

    #[test]
    fn node_ids_are_key_fingerprints(seed in any::<[u8; 32]>()) {
        let key = KeyPair::from_seed(seed);
        prop_assert_eq!(key.node_id(), NodeId::fingerprint(&key.public()));
    }
}
