use homonmt_nnet::gradcheck::standard_fragments;

#[test]
fn every_fragment_passes_gradcheck() {
    for mut fragment in standard_fragments(17) {
        let report = fragment.check(1e-5).unwrap();
        assert!(report.checked > 0, "{}", fragment.name);
        let limit = if fragment.name == "linear+softmax" {
            1e-6
        } else {
            1e-4
        };
        assert!(
            report.max_relative_error < limit,
            "{}: {:e} at {:?}",
            fragment.name,
            report.max_relative_error,
            report.worst
        );
    }
}

#[test]
fn fragments_stay_small() {
    for fragment in standard_fragments(3) {
        if fragment.name != "encoder_decoder_2_layer" {
            assert!(fragment.params.num_scalars() <= 5_000, "{}", fragment.name);
        }
    }
}
