use flavornet::checks::{equivariance_suite, Target};

#[test]
fn every_flavor_and_the_backbone_commute_with_relabeling() {
    for target in Target::ALL {
        let worst = equivariance_suite(target, 50, 0x7065_726d + target as u64, 8).unwrap();
        assert!(worst <= 1e-10, "{}: {worst:e}", target.name());
    }
}
