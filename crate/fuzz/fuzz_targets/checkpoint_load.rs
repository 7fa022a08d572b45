#![no_main]

use libfuzzer_sys::fuzz_target;
use piwno::container::ArrayFile;
use piwno::training::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(f) = ArrayFile::decode(data) {
        if let Ok((ck, model)) = Checkpoint::from_container(&f) {
            assert_eq!(ck.state.params.len(), model.n_params());
        }
    }
});
