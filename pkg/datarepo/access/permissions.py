"""
Which action each repository operation needs on the dataset it touches.

This table is the documented allow/deny matrix: a principal may perform the
operation iff their effective role on the dataset is at least the role the
action requires (reader < writer < admin).
"""
from .models import Action

OPERATION_ACTIONS = {
    'checkin': Action.WRITE,
    'checkout': Action.READ,
    'query': Action.READ,
    'log': Action.READ,
    'diff': Action.READ,
    'tag': Action.WRITE,
    'delete_dataset': Action.ADMIN,
    'grant': Action.ADMIN,
    'revoke_grant': Action.ADMIN,
    'revoke': Action.ADMIN,
    'lineage': Action.READ,
    'register_workflow': Action.WRITE,
    'workflow_run': Action.WRITE,
    'approve_human_step': Action.WRITE,
}


def action_for(operation: str) -> Action:
    return OPERATION_ACTIONS[operation]
