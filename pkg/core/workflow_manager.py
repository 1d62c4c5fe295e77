#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
工作流管理器
统一管理和协调各个工作流的执行

功能：
1. 工作流注册：每个定义带有名称、类、说明和入口调用
2. 工作流状态监控
3. 库内异常统一转换为结果字典
4. 进度统一回调
5. 执行历史记录
"""

import threading
from datetime import datetime
from enum import Enum
from typing import Any, Callable, Dict, List, Optional

from core.errors import BalanceKitError
from core.logger_manager import get_logger
from workflows.balancing import BalancingWorkflow
from workflows.benchmark import BenchmarkWorkflow
from workflows.choice import ChoiceEstimationWorkflow
from workflows.feasibility import FeasibilityWorkflow
from workflows.mixture import MixtureWorkflow
from workflows.spectral import DiagnosticsWorkflow


class WorkflowStatus(Enum):
    """工作流状态枚举"""
    IDLE = "idle"
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"


def failure_result(message: str, error_type: str, details: Optional[Dict] = None) -> Dict[str, Any]:
    """失败结果字典，CLI 根据 error_type 选择退出码"""
    return {
        "success": False,
        "status": "error",
        "message": message,
        "errors": [message],
        "error_type": error_type,
        "details": details or {},
    }


def _check(workflow: FeasibilityWorkflow, kwargs: Dict) -> Dict:
    if kwargs.get('problem') is not None:
        return workflow.check_problem(kwargs['problem'])
    return workflow.check_dataset(kwargs['dataset'])


WORKFLOW_DEFINITIONS: Dict[str, Dict[str, Any]] = {
    'balance': {
        'name': '矩阵平衡',
        'class': BalancingWorkflow,
        'description': '用 Sinkhorn 迭代求解 (A, p, q) 的对角缩放',
        'call': lambda wf, kw: wf.process_balance(kw['problem'], kw.get('config'),
                                                  kw.get('include_history', False)),
    },
    'estimate': {
        'name': 'Luce 模型估计',
        'class': ChoiceEstimationWorkflow,
        'description': '把选择数据归约为矩阵平衡问题并求最大似然估计',
        'call': lambda wf, kw: wf.process_estimate(
            kw['dataset'], normalization=kw.get('normalization'), alpha=kw.get('alpha'),
            beta=kw.get('beta'), augment_eps=kw.get('augment_eps')),
    },
    'check': {
        'name': '可行性判定',
        'class': FeasibilityWorkflow,
        'description': '判定存在性、唯一性以及选择数据的连通性',
        'call': _check,
    },
    'diagnose': {
        'name': '收敛诊断',
        'class': DiagnosticsWorkflow,
        'description': '计算 Fiedler 特征值、收敛速率界与复杂度常数',
        'call': lambda wf, kw: wf.process_diagnose(kw['problem']),
    },
    'mixture': {
        'name': '混合模型',
        'class': MixtureWorkflow,
        'description': '用 EM 算法估计 Luce 混合模型',
        'call': lambda wf, kw: wf.process_mixture(kw['dataset'], kw.get('components', 2),
                                                  seed=kw.get('seed'),
                                                  max_rounds=kw.get('max_rounds')),
    },
    'bench': {
        'name': '复杂度基准',
        'class': BenchmarkWorkflow,
        'description': '统计随机实例的复杂度常数随规模的增长',
        'call': lambda wf, kw: wf.process_bench(kw.get('spec')),
    },
}


class WorkflowManager:
    """工作流管理器"""

    def __init__(self, config_manager=None, progress_callback: Optional[Callable] = None):
        """
        Args:
            config_manager: 配置管理器实例，传给每个工作流
            progress_callback: 进度回调函数，接收(workflow_id, progress, message)参数
        """
        self.logger = get_logger("WorkflowManager")
        self.config_manager = config_manager
        self.progress_callback = progress_callback

        self.workflows: Dict[str, Dict[str, Any]] = {}
        self.workflow_status: Dict[str, WorkflowStatus] = {}
        self.last_results: Dict[str, Dict] = {}

        self.workflow_threads: Dict[str, threading.Thread] = {}
        self._lock = threading.Lock()
        self.execution_history: List[Dict] = []

        self._register_workflows()

    def _register_workflows(self):
        """注册所有可用的工作流"""
        for workflow_id, definition in WORKFLOW_DEFINITIONS.items():
            self.workflows[workflow_id] = definition
            self.workflow_status[workflow_id] = WorkflowStatus.IDLE

    def get_available_workflows(self) -> List[Dict]:
        """获取可用的工作流列表"""
        return [
            {
                'id': workflow_id,
                'name': definition['name'],
                'description': definition['description'],
                'status': self.workflow_status[workflow_id].value
            }
            for workflow_id, definition in self.workflows.items()
        ]

    def _create_workflow_instance(self, workflow_id: str):
        workflow_class = self.workflows[workflow_id]['class']

        def workflow_progress_callback(progress: float, message: str):
            if self.progress_callback:
                self.progress_callback(workflow_id, progress, message)

        return workflow_class(config_manager=self.config_manager,
                              progress_callback=workflow_progress_callback)

    def _run(self, workflow_id: str, kwargs: Dict) -> Dict:
        """执行工作流，库内异常转换为失败结果"""
        self.workflow_status[workflow_id] = WorkflowStatus.RUNNING
        self._record(workflow_id, "start")
        try:
            instance = self._create_workflow_instance(workflow_id)
            result = self.workflows[workflow_id]['call'](instance, kwargs)
        except BalanceKitError as e:
            self.logger.error(f"工作流 {workflow_id} 失败: {type(e).__name__}: {e.message}")
            result = failure_result(e.message, type(e).__name__, e.details)
            self._record(workflow_id, "error", error=e.message)
        except Exception as e:
            self.workflow_status[workflow_id] = WorkflowStatus.FAILED
            self._record(workflow_id, "error", error=str(e))
            raise

        self._record(workflow_id, "end", success=result.get("success", False),
                     message=result.get("message", ""))
        self.workflow_status[workflow_id] = (
            WorkflowStatus.COMPLETED if result.get("success", False) else WorkflowStatus.FAILED
        )
        self.last_results[workflow_id] = result
        return result

    def execute_workflow_sync(self, workflow_id: str, **kwargs) -> Dict:
        """
        同步执行指定的工作流

        Args:
            workflow_id: 工作流ID
            **kwargs: 工作流特定的参数（problem / dataset / spec 等）

        Returns:
            Dict: 执行结果
        """
        if workflow_id not in self.workflows:
            return failure_result(f"未知的工作流: {workflow_id}", "InvalidInput")
        return self._run(workflow_id, kwargs)

    def execute_workflow(self, workflow_id: str, **kwargs) -> Dict:
        """
        在后台线程中执行指定的工作流，结果通过 wait 或 get_last_result 获取

        Returns:
            Dict: 启动结果
        """
        if workflow_id not in self.workflows:
            return failure_result(f"未知的工作流: {workflow_id}", "InvalidInput")

        with self._lock:
            if self.workflow_status[workflow_id] == WorkflowStatus.RUNNING:
                return failure_result("工作流正在运行中", "InvalidInput")
            self.workflow_status[workflow_id] = WorkflowStatus.RUNNING

        def workflow_runner():
            try:
                self._run(workflow_id, kwargs)
            except Exception as e:
                self.logger.exception(f"工作流 {workflow_id} 异常终止: {e}")

        thread = threading.Thread(target=workflow_runner, daemon=True,
                                  name=f"workflow-{workflow_id}")
        self.workflow_threads[workflow_id] = thread
        thread.start()
        return {"success": True, "message": f"工作流 {self.workflows[workflow_id]['name']} 已开始执行"}

    def wait(self, workflow_id: str, timeout: Optional[float] = None) -> Optional[Dict]:
        """等待后台工作流结束并返回结果"""
        thread = self.workflow_threads.pop(workflow_id, None)
        if thread is not None:
            thread.join(timeout)
        return self.last_results.get(workflow_id)

    def get_last_result(self, workflow_id: str) -> Optional[Dict]:
        return self.last_results.get(workflow_id)

    def get_workflow_status(self, workflow_id: str) -> Optional[WorkflowStatus]:
        return self.workflow_status.get(workflow_id)

    def is_any_workflow_running(self) -> bool:
        """检查是否有任何工作流正在运行"""
        return any(status == WorkflowStatus.RUNNING for status in self.workflow_status.values())

    def get_execution_history(self, limit: int = 50) -> List[Dict]:
        """获取执行历史记录"""
        return self.execution_history[-limit:]

    def _record(self, workflow_id: str, action: str, **fields):
        """追加一条执行历史：start / end / error"""
        entry = {
            "workflow_id": workflow_id,
            "workflow_name": self.workflows[workflow_id]["name"],
            "action": action,
            "timestamp": datetime.now().isoformat(),
        }
        entry.update(fields)
        with self._lock:
            self.execution_history.append(entry)
