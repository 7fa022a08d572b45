#![no_main]

use libfuzzer_sys::fuzz_target;
use piwno::container::ArrayFile;

fuzz_target!(|data: &[u8]| {
    if let Ok(f) = ArrayFile::decode(data) {
        // anything that decodes must survive a re-encode unchanged
        let bytes = f.encode().expect("decoded container re-encodes");
        assert_eq!(ArrayFile::decode(&bytes).expect("re-encoded container decodes"), f);
    }
});
