//! Seals a signal, reveals its key, and shows what happens when someone
//! resubmits another searcher's envelope. Then commits and verifies a
//! challenger dataset.

use scynet::commit_reveal::{open_signal, seal_signal, verify_dataset, BlobStore, DatasetCommitment, EnvelopeContext};
use scynet::crypto::Keypair;
use scynet::scoring::codec;
use scynet::types::{SymmetricKey, Uuid};

fn main() {
    let alice = Keypair::from_name("alice").address();
    let mallory = Keypair::from_name("mallory").address();
    let key = SymmetricKey([7; 32]);
    let agent = Uuid([1; 16]);

    let signal = codec::encode_vector(&[0.25, -1.5, 3.0]);
    let envelope = seal_signal(&key, agent, EnvelopeContext::Tick(42), &signal, &alice);
    println!("commitment {}", envelope.commitment.to_hex());

    let opened = open_signal(&envelope, &key, &alice).expect("owner opens");
    println!("alice reveals: {:?}", codec::decode_vector(&opened).unwrap());
    println!("mallory resubmits it: {}", open_signal(&envelope, &key, &mallory).unwrap_err());
    println!("wrong key: {}", open_signal(&envelope, &SymmetricKey([8; 32]), &alice).unwrap_err());

    let mut blobs = BlobStore::new();
    let dataset_key = SymmetricKey([9; 32]);
    let inputs = codec::encode_matrix(&[vec![0.1, 0.2, 0.3], vec![-0.4, 0.5, 0.9]]);
    let outputs = codec::encode_vector(&[1.0, 2.0, 3.0, 4.0]);
    let commitment = DatasetCommitment::publish(&mut blobs, &alice, inputs, &outputs, &dataset_key);
    let verified = verify_dataset(&commitment, &dataset_key, &blobs).expect("honest dataset verifies");
    println!("dataset outputs after reveal: {:?}", codec::decode_vector(&verified.outputs).unwrap());

    blobs.replace(&commitment.inputs_blob, codec::encode_matrix(&[vec![9.9, 9.9, 9.9]]));
    println!("swapped inputs: {}", verify_dataset(&commitment, &dataset_key, &blobs).unwrap_err());
}
