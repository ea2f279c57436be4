int main(){}