import logging

import pytest

from src.infrastructure.event_bus import Event, EventBus, EventType


def test_handlers_run_in_subscription_order():
    bus = EventBus()
    seen = []
    bus.subscribe(EventType.EPOCH_COMPLETED, lambda event: seen.append(("a", event.data["epoch"])))
    bus.subscribe(EventType.EPOCH_COMPLETED, lambda event: seen.append(("b", event.data["epoch"])))
    bus.subscribe(EventType.RUN_COMPLETED, lambda event: seen.append(("run", None)))
    bus.publish(Event(EventType.EPOCH_COMPLETED, {"epoch": 3}))
    assert seen == [("a", 3), ("b", 3)]
    bus.reset()
    bus.publish(Event(EventType.EPOCH_COMPLETED, {"epoch": 4}))
    assert len(seen) == 2


def failing(event):
    raise OSError("disk full")


def test_handler_failures_become_error_events(caplog):
    bus = EventBus()
    errors, later = [], []
    bus.subscribe(EventType.ERROR, lambda event: errors.append(event.data))
    bus.subscribe(EventType.CHECKPOINT_SAVED, failing)
    bus.subscribe(EventType.CHECKPOINT_SAVED, lambda event: later.append(1))
    with caplog.at_level(logging.CRITICAL, logger="EventBus"):
        bus.publish(Event(EventType.CHECKPOINT_SAVED, {}))
    assert errors[0]["message"] == "disk full" and errors[0]["origin"] == "failing"
    assert later == [1]
    assert "disk full" in caplog.text


def test_raise_errors_reraises_after_reporting():
    bus = EventBus(raise_errors=True)
    errors = []
    bus.subscribe(EventType.ERROR, lambda event: errors.append(event.data["origin"]))
    bus.subscribe(EventType.RUN_STARTED, failing)
    with pytest.raises(OSError, match="disk full"):
        bus.publish(Event(EventType.RUN_STARTED, {"stage": "train"}))
    assert errors == ["failing"]


def test_failing_error_handler_does_not_recurse():
    bus = EventBus()
    bus.subscribe(EventType.ERROR, failing)
    bus.subscribe(EventType.RUN_STARTED, failing)
    bus.publish(Event(EventType.RUN_STARTED, {}))
