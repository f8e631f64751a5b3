//! Single-field mutations of a valid payment, each paired with the one
//! verification reason it must produce.

use a2a_x402::crypto::Address;
use a2a_x402::facilitator::VerifyReason;
use a2a_x402::wire::{PaymentRequirements, SignedPaymentPayload};
use rand::Rng;
use rand_chacha::ChaCha20Rng;

use super::{address, key, PayFixture, PRICE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutation {
    SignatureBitFlip,
    Expired,
    NotYetValid,
    WrongPayee,
    AmountTooLow,
    UnknownAsset,
    WrongNetwork,
    UnfundedPayer,
}

impl Mutation {
    pub const ALL: [Mutation; 8] = [
        Mutation::SignatureBitFlip,
        Mutation::Expired,
        Mutation::NotYetValid,
        Mutation::WrongPayee,
        Mutation::AmountTooLow,
        Mutation::UnknownAsset,
        Mutation::WrongNetwork,
        Mutation::UnfundedPayer,
    ];

    pub fn expected(self) -> VerifyReason {
        match self {
            Mutation::SignatureBitFlip => VerifyReason::BadSignature,
            Mutation::Expired => VerifyReason::Expired,
            Mutation::NotYetValid => VerifyReason::NotYetValid,
            Mutation::WrongPayee => VerifyReason::WrongPayee,
            Mutation::AmountTooLow => VerifyReason::AmountTooLow,
            Mutation::UnknownAsset => VerifyReason::WrongAsset,
            Mutation::WrongNetwork => VerifyReason::WrongNetwork,
            Mutation::UnfundedPayer => VerifyReason::InsufficientFunds,
        }
    }
}

fn other_address(rng: &mut ChaCha20Rng, not: &Address) -> Address {
    loop {
        let a = address(rng);
        if a != *not {
            return a;
        }
    }
}

/// Applies `m` to a fresh valid payment at time `now`. Changes to signed
/// fields are re-signed by the payer, so only the targeted rule can fail.
pub fn mutate(
    fx: &PayFixture,
    rng: &mut ChaCha20Rng,
    m: Mutation,
    now: u64,
) -> (SignedPaymentPayload, PaymentRequirements) {
    let mut payload = fx.valid_payload(rng, now);
    let mut reqs = fx.reqs.clone();
    let mut auth = payload.authorization.clone();
    match m {
        Mutation::SignatureBitFlip => {
            let byte = rng.gen_range(0..64);
            let bit = 1u8 << rng.gen_range(0..8);
            if byte < 32 {
                payload.signature.r[byte] ^= bit;
            } else {
                payload.signature.s[byte - 32] ^= bit;
            }
            return (payload, reqs);
        }
        Mutation::Expired => {
            let k = rng.gen_range(0..10_000);
            auth.valid_before = now - k;
            auth.valid_after = auth.valid_before - rng.gen_range(1..10_000);
        }
        Mutation::NotYetValid => {
            auth.valid_after = now + rng.gen_range(0..10_000);
            auth.valid_before = auth.valid_after + rng.gen_range(1..10_000);
        }
        Mutation::WrongPayee => auth.to = other_address(rng, &fx.payee),
        Mutation::AmountTooLow => auth.value = rng.gen_range(0..PRICE),
        Mutation::UnknownAsset => {
            reqs.asset = other_address(rng, &fx.token);
            return (payload, reqs);
        }
        Mutation::WrongNetwork => {
            payload.network = format!("sim:{}", rng.gen_range(1..31_337u64));
            return (payload, reqs);
        }
        Mutation::UnfundedPayer => {
            let pauper = key(rng);
            auth.from = pauper.address();
            return (fx.sign(auth, &pauper), reqs);
        }
    }
    (fx.sign(auth, &fx.payer), reqs)
}
