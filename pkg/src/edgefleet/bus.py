"""In-process message bus with the same framed encoding as the socket
transport: every publish round-trips through encode/decode so schema
violations surface at the publisher, and delivery is synchronous in publish
order, which gives per-topic FIFO by construction.

The optional lossy mode models an unreliable uplink: it drops measurement
messages (never commands, acks, or energy windows) with a seeded probability.
"""
from __future__ import annotations

import random
from typing import Callable, Optional

from .wire import BusMessage, ParsedTopic, decode, encode, parse_topic

Handler = Callable[[BusMessage, ParsedTopic], None]
Predicate = Callable[[ParsedTopic], bool]


class Bus:
    def __init__(self, drop_probability: float = 0.0, drop_rng: Optional[random.Random] = None):
        if not 0.0 <= drop_probability <= 1.0:
            raise ValueError("drop_probability must be in [0, 1]")
        self.drop_probability = drop_probability
        self._drop_rng = drop_rng or random.Random(0)
        self._subscribers: list[tuple[Predicate, Handler]] = []
        self.published = 0
        self.dropped = 0

    def subscribe(self, predicate: Predicate, handler: Handler) -> None:
        self._subscribers.append((predicate, handler))

    def publish(self, topic: str, payload: dict, publish_time_s: float) -> Optional[BusMessage]:
        """Validate, frame, and deliver one message; returns the delivered
        message or None when the lossy transport dropped it."""
        message = BusMessage(topic=topic, payload=payload, publish_time_s=publish_time_s)
        delivered = decode(encode(message))
        parsed = parse_topic(delivered.topic)
        self.published += 1
        if (
            self.drop_probability > 0.0
            and parsed.channel == "measurement"
            and self._drop_rng.random() < self.drop_probability
        ):
            self.dropped += 1
            return None
        for predicate, handler in self._subscribers:
            if predicate(parsed):
                handler(delivered, parsed)
        return delivered
