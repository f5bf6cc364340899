import sys

from usaav.experiment.cli import cli


def main():
    menu = """
    Please select an option:
        1. Anti-collapse comparison (exp1)
        2. Limiting shapes (exp2)
        3. Finite-n convergence (dobrushin)
        4. Metastability sweep (metastab)
    """
    if len(sys.argv) > 1:
        return cli(sys.argv[1:])

    print(menu)
    choice = input("Enter your choice (1): ") or "1"

    match choice:
        case "1":
            return cli(["exp1", "--config", "configs/exp1.json"])
        case "2":
            return cli(["exp2", "--config", "configs/exp2.json"])
        case "3":
            return cli(["dobrushin", "--config", "configs/dobrushin.json"])
        case "4":
            return cli(["metastab", "--config", "configs/metastab.json"])
        case _:
            print(
                f"\n Invalid choice: '{choice}'. Please run the script "
                + "again and select a number between 1 and 4."
            )
            return 2


if __name__ == "__main__":
    sys.exit(main())
