import logging
import os
import threading
import uuid
from concurrent.futures import ProcessPoolExecutor, as_completed
from contextlib import contextmanager

from django.db import DatabaseError
from django.utils import timezone

logger = logging.getLogger(__name__)


class ProgressTracker:
    """Replication counts per run id; an entry lives from `start` to `finish`."""
    _runs = {}
    _lock = threading.Lock()

    @classmethod
    def start(cls, run_id, total):
        with cls._lock:
            cls._runs[run_id] = {'total': total, 'done': 0, 'failed': 0, 'status': 'Processing'}

    @classmethod
    def advance(cls, run_id, failed=False):
        with cls._lock:
            run = cls._runs[run_id]
            run['done'] += 1
            run['failed'] += int(failed)
            return cls._snapshot(run)

    @classmethod
    def get(cls, run_id):
        with cls._lock:
            run = cls._runs.get(run_id)
            return cls._snapshot(run) if run else {'total': 0, 'done': 0, 'failed': 0, 'status': 'Pending', 'percent': 0}

    @classmethod
    def finish(cls, run_id):
        with cls._lock:
            run = cls._runs.pop(run_id)
            run['status'] = 'Completed'
            return cls._snapshot(run)

    @staticmethod
    def _snapshot(run):
        return {**run, 'percent': int(100 * run['done'] / run['total']) if run['total'] else 100}


def new_run_id():
    return uuid.uuid4().hex


def _setup_worker():
    # spawn/forkserver children start without the app registry
    if os.environ.get('DJANGO_SETTINGS_MODULE'):
        import django
        django.setup()


def run_replications(worker, reps, jobs=1, run_id=None, label='replication'):
    """Call worker(r) for r in 0..reps-1 on at most `jobs` worker processes.

    `worker` must be picklable when jobs > 1 (a module-level function or a
    bound method of a picklable object). Returns a list indexed by
    replication: the worker's value, or the exception it raised. Completion
    order never affects the result order.
    """
    run_id = run_id or new_run_id()
    results = [None] * reps
    ProgressTracker.start(run_id, reps)

    def record(r, value):
        results[r] = value
        failed = isinstance(value, Exception)
        progress = ProgressTracker.advance(run_id, failed)
        status = f"({progress['done']}/{reps} complete, {progress['percent']}%)"
        if failed:
            logger.warning(f"{label} {r + 1}/{reps} failed {status}: {value}")
        else:
            logger.info(f"{label} {r + 1}/{reps} done {status}")

    if jobs <= 1:
        for r in range(reps):
            try:
                record(r, worker(r))
            except Exception as e:
                record(r, e)
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, reps), initializer=_setup_worker) as pool:
            futures = {pool.submit(worker, r): r for r in range(reps)}
            for future in as_completed(futures):
                r = futures[future]
                try:
                    record(r, future.result())
                except Exception as e:
                    record(r, e)

    summary = ProgressTracker.finish(run_id)
    logger.info(f"{run_id}: {summary['done'] - summary['failed']}/{reps} {label}s succeeded")
    return results


class _NullRecord:
    pk = None

    def finish(self, status, message=''):
        pass


class _DbRecord:
    def __init__(self, record):
        self.record = record
        self.pk = record.pk

    def finish(self, status, message=''):
        try:
            self.record.status = status
            self.record.log_message = message
            self.record.finished_at = timezone.now()
            self.record.save(update_fields=['status', 'log_message', 'finished_at'])
        except DatabaseError as e:
            logger.warning(f"Could not update run record {self.pk}: {e}")


@contextmanager
def track_run(command, arguments, output_path=''):
    """Record a command invocation in RunRecord; database problems only warn."""
    from core.models import RunRecord

    try:
        handle = _DbRecord(RunRecord.objects.create(
            command=command, arguments=arguments, output_path=str(output_path or ''), status='PROCESSING'))
    except DatabaseError as e:
        logger.warning(f"Run record database unavailable, continuing without it: {e}")
        handle = _NullRecord()
    try:
        yield handle
    except Exception as e:
        handle.finish('FAILED', str(e))
        raise
    else:
        handle.finish('COMPLETED')
