import logging
from collections import defaultdict
from enum import Enum
from typing import List, Callable, Any, Dict
from datetime import datetime

logger = logging.getLogger("EventBus")

class EventType(Enum):
    RUN_STARTED = "RUN_STARTED"
    BATCH_COMPLETED = "BATCH_COMPLETED"
    EPOCH_COMPLETED = "EPOCH_COMPLETED"
    CHECKPOINT_SAVED = "CHECKPOINT_SAVED"
    RUN_COMPLETED = "RUN_COMPLETED"
    ERROR = "ERROR"

class Event:
    """Training-loop event; `data` carries the payload for subscribers."""
    def __init__(self, event_type: EventType, data: Dict[str, Any]):
        self.type = event_type
        self.data = data
        self.timestamp = datetime.now()

    def __repr__(self):
        return f"<Event type={self.type.name} timestamp={self.timestamp}>"

class EventBus:
    """
    Synchronous publish/subscribe hub the trainers report through.
    Handler failures are logged and republished as ERROR events; with
    raise_errors=True the original exception is re-raised afterwards.
    """
    def __init__(self, raise_errors: bool = False):
        self._subscribers: Dict[EventType, List[Callable]] = defaultdict(list)
        self.raise_errors = raise_errors

    def subscribe(self, event_type: EventType, handler: Callable[[Event], None]):
        """Register a handler for a specific event type."""
        self._subscribers[event_type].append(handler)
        logger.debug(f"Subscribed {getattr(handler, '__name__', handler)} to {event_type.name}")

    def publish(self, event: Event):
        """Deliver the event to every subscriber, in subscription order."""
        logger.debug(f"Publishing event: {event}")
        for handler in self._subscribers.get(event.type, []):
            try:
                handler(event)
            except Exception as e:
                name = getattr(handler, "__name__", repr(handler))
                logger.critical(f"Error acting on event {event.type} in handler {name}: {e}", exc_info=True)
                # an ERROR handler failing must not recurse
                if event.type != EventType.ERROR:
                    self.publish(Event(EventType.ERROR, {"message": str(e), "origin": name, "exception": e}))
                if self.raise_errors:
                    raise

    def reset(self):
        self._subscribers.clear()
