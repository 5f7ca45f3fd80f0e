use mala_lab::experiment::seed_for;
use mala_lab::ScalingExponent;

#[test]
fn golden_seed_vectors() {
    let text = include_str!("golden/seed_vectors.txt");
    let mut checked = 0;
    for line in text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
        let f: Vec<&str> = line.split_whitespace().collect();
        let master: u64 = f[0].parse().unwrap();
        let n: usize = f[1].parse().unwrap();
        let gamma: ScalingExponent = f[2].parse().unwrap();
        let ell: f64 = f[3].parse().unwrap();
        let replica: u64 = f[4].parse().unwrap();
        let expected: u64 = f[5].parse().unwrap();
        assert_eq!(seed_for(master, n, gamma, ell, replica), expected, "{line}");
        checked += 1;
    }
    assert_eq!(checked, 4);
}

#[test]
fn gamma_spelling_does_not_change_seed() {
    let a: ScalingExponent = "1/3".parse().unwrap();
    let b: ScalingExponent = "2/6".parse().unwrap();
    assert_eq!(seed_for(0, 256, a, 1.0, 0), seed_for(0, 256, b, 1.0, 0));
}
