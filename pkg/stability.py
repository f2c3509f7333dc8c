import argparse
import asyncio
import sys
from typing import List, Optional

from loguru import logger

from src.app import StabilityApp
from src.config import ConfigManager


def configure_logging(verbose: bool = False) -> None:
    """配置日志"""
    logger.remove()
    logger.add(sys.stderr, level="DEBUG" if verbose else "INFO")
    logger.add("stability.log", rotation="10 MB", compression="zip", level="INFO")


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="神经网络谱稳定性诊断工具")
    parser.add_argument("subcommand", nargs="?", choices=StabilityApp.SUBCOMMANDS,
                        help="要执行的子命令；使用运行清单作为配置时可省略")
    parser.add_argument("--config", help="INI/JSON 配置文件或 manifest.json")
    parser.add_argument("--out", help="输出目录，覆盖 [output] dir")
    parser.add_argument("--seed", type=int, help="主随机种子，覆盖 [experiment] seed")
    parser.add_argument("--threads", type=int, help="并发工作单元数，覆盖 [experiment] threads")
    parser.add_argument("--verbose", action="store_true", help="输出调试日志")
    return parser.parse_args(argv)


async def main(args: argparse.Namespace) -> int:
    """主函数"""
    config = await ConfigManager.load_config(args.config)
    if args.out is not None:
        config.override("output", "dir", args.out)
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise ValueError(f"--seed 必须在 0 到 2^64−1 之间: {args.seed}")
        config.override("experiment", "seed", args.seed)
    if args.threads is not None:
        if args.threads < 1:
            raise ValueError(f"--threads 必须是正整数: {args.threads}")
        config.override("experiment", "threads", args.threads)

    subcommand = args.subcommand or config.subcommand
    if subcommand is None:
        raise ValueError("缺少子命令")

    app = StabilityApp(config)
    try:
        await app.initialize()
        return await app.run(subcommand)
    finally:
        await app.close()


def run(argv: Optional[List[str]] = None) -> int:
    """运行命令行；0 成功，1 验证失败，2 读写错误"""
    args = parse_args(argv)
    configure_logging(args.verbose)
    try:
        return asyncio.run(main(args))
    except asyncio.TimeoutError as e:
        logger.error(f"程序运行超时: {e}")
        return 1
    except ValueError as e:
        logger.error(f"程序运行出错: {e}")
        return 1
    except OSError as e:
        logger.error(f"文件读写失败: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(run())
