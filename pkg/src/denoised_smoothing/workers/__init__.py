"""Worker processes for background certification."""

from .certify_worker import CertifyTask, certify_points, run_certify_task

__all__ = ['CertifyTask', 'certify_points', 'run_certify_task']
